use std::path::{Path, PathBuf};

/// Environment variable overriding the output directory.
pub const OUT_DIR_ENV: &str = "INFGEN_OUT_DIR";

/// Output directory: the environment override, else the flag, else the config.
pub fn out_dir(flag: Option<&Path>, config: &Path) -> PathBuf {
    if let Some(dir) = std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(dir);
    }
    flag.map(Path::to_path_buf).unwrap_or_else(|| config.to_path_buf())
}

/// Relative output paths land in the output directory.
pub fn output_path(out_dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        out_dir.join(p)
    }
}
