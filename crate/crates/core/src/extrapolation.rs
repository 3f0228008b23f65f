//! Iterative resolution extrapolation without retraining.
//!
//! Each step decodes at a larger size than the last; every step after the
//! first re-encodes the previous output so the decoder keeps attending to a
//! latent consistent with the running image.

use std::fmt;

use crate::codec::LatentMap;
use crate::decoder::TargetResolution;
use crate::error::{invalid, Result};
use crate::image::Image;
use crate::model::InfGen;

/// Tolerance used when comparing real scale factors.
const EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ExtrapolationPlan {
    pub base_h: usize,
    pub base_w: usize,
    pub target_h: usize,
    pub target_w: usize,
    /// Per-step `(s_h, s_w)`, each in `[1, cap]`.
    pub steps: Vec<(f64, f64)>,
    pub cap: f64,
}

/// Greedy per-axis plan: every step takes `min(cap, remaining ratio)` on
/// each axis independently.
pub fn plan_schedule(base: (usize, usize), target: (usize, usize), cap: f64) -> Result<ExtrapolationPlan> {
    if !(cap.is_finite() && cap > 1.0) {
        return Err(invalid!("extrapolation cap must exceed 1, got {cap}"));
    }
    if base.0 == 0 || base.1 == 0 {
        return Err(invalid!("base resolution must be positive"));
    }
    if target.0 < base.0 || target.1 < base.1 {
        return Err(invalid!(
            "target {}x{} is below base {}x{}",
            target.0,
            target.1,
            base.0,
            base.1
        ));
    }
    let goal_h = target.0 as f64 / base.0 as f64;
    let goal_w = target.1 as f64 / base.1 as f64;
    let (mut acc_h, mut acc_w) = (1.0f64, 1.0f64);
    let mut steps = Vec::new();
    while goal_h / acc_h > 1.0 + EPS || goal_w / acc_w > 1.0 + EPS {
        let s_h = (goal_h / acc_h).clamp(1.0, cap);
        let s_w = (goal_w / acc_w).clamp(1.0, cap);
        acc_h *= s_h;
        acc_w *= s_w;
        steps.push((s_h, s_w));
    }
    Ok(ExtrapolationPlan {
        base_h: base.0,
        base_w: base.1,
        target_h: target.0,
        target_w: target.1,
        steps,
        cap,
    })
}

fn round_to_8(v: f64) -> usize {
    ((v / 8.0).round() as usize).max(1) * 8
}

impl ExtrapolationPlan {
    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    /// `base · ∏ s` per axis, before any rounding.
    pub fn final_product(&self) -> (f64, f64) {
        self.steps.iter().fold(
            (self.base_h as f64, self.base_w as f64),
            |(h, w), &(sh, sw)| (h * sh, w * sw),
        )
    }

    /// Resolution of each step's output: intermediates rounded to the nearest
    /// multiple of 8, the last step exactly the target.
    pub fn resolutions(&self) -> Vec<(usize, usize)> {
        let (mut h, mut w) = (self.base_h as f64, self.base_w as f64);
        let n = self.steps.len();
        self.steps
            .iter()
            .enumerate()
            .map(|(i, &(sh, sw))| {
                h *= sh;
                w *= sw;
                if i + 1 == n {
                    (self.target_h, self.target_w)
                } else {
                    (round_to_8(h), round_to_8(w))
                }
            })
            .collect()
    }

    /// Cumulative area scale `∏ s_h·s_w` after each step.
    pub fn cumulative_scales(&self) -> Vec<f64> {
        let mut acc = 1.0;
        self.steps
            .iter()
            .map(|&(sh, sw)| {
                acc *= sh * sw;
                acc
            })
            .collect()
    }
}

impl fmt::Display for ExtrapolationPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let steps: Vec<String> = self
            .steps
            .iter()
            .map(|(h, w)| format!("({}, {})", fmt_factor(*h), fmt_factor(*w)))
            .collect();
        write!(f, "[{}]", steps.join(", "))
    }
}

fn fmt_factor(v: f64) -> String {
    if (v - v.round()).abs() < EPS {
        format!("{}", v.round() as i64)
    } else {
        format!("{v:.4}")
    }
}

/// Runs the plan from `z0`. The first step decodes `z0` directly; later
/// steps decode the encoder mean of the previous output. `on_step` sees
/// every step's image, including the last.
pub fn run_extrapolation(
    model: &InfGen,
    z0: &LatentMap,
    plan: &ExtrapolationPlan,
    mut on_step: impl FnMut(usize, &Image) -> Result<()>,
) -> Result<Image> {
    if z0.dims().0 != 1 {
        return Err(invalid!("extrapolation runs on a single latent"));
    }
    let max_res = model.decoder.max_res();
    if plan.target_h > max_res || plan.target_w > max_res {
        return Err(invalid!(
            "target {}x{} exceeds max_res {max_res}",
            plan.target_h,
            plan.target_w
        ));
    }
    if plan.is_empty() {
        let t = TargetResolution::new(plan.base_h, plan.base_w)?;
        return model.decoder.decode_image(z0, t);
    }
    let mut latent = z0.clone();
    let mut image: Option<Image> = None;
    for (i, (h, w)) in plan.resolutions().into_iter().enumerate() {
        if let Some(prev) = &image {
            latent = model.encode_native(prev)?;
        }
        let out = model.decoder.decode_image(&latent, TargetResolution::new(h, w)?)?;
        on_step(i + 1, &out)?;
        image = Some(out);
    }
    Ok(image.expect("non-empty plan"))
}

/// Recommended operating envelope of a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleLimits {
    pub latent_size: (usize, usize),
    pub training_range: (usize, usize),
    pub reliable_range: (usize, usize),
    /// Largest recommended cumulative area scale `∏ s_h·s_w`.
    pub max_total_scale: f64,
}

impl ScaleLimits {
    pub fn new(
        latent_size: (usize, usize),
        training_range: (usize, usize),
        reliable_range: (usize, usize),
        max_total_scale: f64,
    ) -> Result<Self> {
        if reliable_range.0 > training_range.0 || reliable_range.1 < training_range.1 {
            return Err(invalid!("reliable range must contain the training range"));
        }
        if training_range.0 > training_range.1 {
            return Err(invalid!("training range is inverted"));
        }
        if !(max_total_scale >= 1.0) {
            return Err(invalid!("max_total_scale must be at least 1"));
        }
        Ok(Self {
            latent_size,
            training_range,
            reliable_range,
            max_total_scale,
        })
    }

    /// 32×32 latent trained on 256∼512.
    pub fn latent32() -> Self {
        Self::new((32, 32), (256, 512), (256, 1024), 16.0).expect("valid preset")
    }

    /// 64×64 latent trained on 512∼1024.
    pub fn latent64() -> Self {
        Self::new((64, 64), (512, 1024), (512, 2048), 16.0).expect("valid preset")
    }

    /// 64×64 latent trained on 512∼2048.
    pub fn latent64_wide() -> Self {
        Self::new((64, 64), (512, 2048), (512, 4096), 64.0).expect("valid preset")
    }

    /// Desk model: 8×8 latent trained on 64∼256. Follows the other presets:
    /// reliable up to twice the largest training side, area cap
    /// `(reliable max / base)²`.
    pub fn desk() -> Self {
        Self::new((8, 8), (64, 256), (64, 512), 64.0).expect("valid preset")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanWarning {
    pub step: usize,
    pub message: String,
}

impl fmt::Display for PlanWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step {}: {}", self.step, self.message)
    }
}

/// One warning per step that leaves the reliable range or pushes the
/// cumulative area scale past the limit. Advisory only.
pub fn validate_against_limits(plan: &ExtrapolationPlan, limits: &ScaleLimits) -> Vec<PlanWarning> {
    let (lo, hi) = limits.reliable_range;
    plan.resolutions()
        .into_iter()
        .zip(plan.cumulative_scales())
        .enumerate()
        .filter_map(|(i, ((h, w), scale))| {
            let mut reasons = Vec::new();
            if h < lo || w < lo || h > hi || w > hi {
                reasons.push(format!("{h}x{w} is outside the reliable range {lo}..={hi}"));
            }
            if scale > limits.max_total_scale * (1.0 + EPS) {
                reasons.push(format!(
                    "cumulative scale {scale:.2}x exceeds {}x",
                    limits.max_total_scale
                ));
            }
            (!reasons.is_empty()).then(|| PlanWarning {
                step: i + 1,
                message: reasons.join("; "),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use candle_core::DType;
    use proptest::prelude::*;

    #[test]
    fn greedy_examples() {
        let p = plan_schedule((512, 512), (2048, 2048), 2.0).unwrap();
        assert_eq!(p.steps, vec![(2.0, 2.0), (2.0, 2.0)]);
        assert!(plan_schedule((512, 512), (512, 512), 2.0).unwrap().is_empty());
        let p = plan_schedule((512, 512), (2048, 1024), 2.0).unwrap();
        assert_eq!(p.steps, vec![(2.0, 2.0), (2.0, 1.0)]);
        assert_eq!(p.to_string(), "[(2, 2), (2, 1)]");
    }

    #[test]
    fn plan_errors() {
        assert!(plan_schedule((64, 64), (32, 128), 2.0).is_err());
        assert!(plan_schedule((64, 64), (128, 128), 1.0).is_err());
    }

    #[test]
    fn resolutions_round_intermediates() {
        let p = plan_schedule((64, 64), (300, 200), 2.0).unwrap();
        let r = p.resolutions();
        assert_eq!(*r.last().unwrap(), (300, 200));
        for &(h, w) in &r[..r.len() - 1] {
            assert_eq!((h % 8, w % 8), (0, 0));
        }
    }

    #[test]
    fn limit_examples() {
        let limits = ScaleLimits::latent64();
        let p = plan_schedule((512, 512), (2048, 2048), 2.0).unwrap();
        assert_eq!(p.cumulative_scales().last().copied(), Some(16.0));
        assert!(validate_against_limits(&p, &limits).is_empty());
        let p = plan_schedule((512, 512), (4096, 4096), 2.0).unwrap();
        let w = validate_against_limits(&p, &limits);
        assert_eq!(w.first().map(|w| w.step), Some(3));
        let empty = plan_schedule((512, 512), (512, 512), 2.0).unwrap();
        assert!(validate_against_limits(&empty, &limits).is_empty());
        assert!(validate_against_limits(&p, &ScaleLimits::latent64_wide()).is_empty());
    }

    #[test]
    fn preset_envelopes_are_consistent() {
        for l in [
            ScaleLimits::latent32(),
            ScaleLimits::latent64(),
            ScaleLimits::latent64_wide(),
            ScaleLimits::desk(),
        ] {
            let base = 8 * l.latent_size.0;
            assert_eq!(l.training_range.0, base);
            assert_eq!(l.reliable_range.1, 2 * l.training_range.1);
            let side = (l.max_total_scale.sqrt() * base as f64) as usize;
            assert_eq!(side, l.reliable_range.1);
        }
    }

    #[test]
    fn shape_chain() {
        let cfg = ModelConfig::tiny();
        let model = InfGen::new(&cfg, 2, DType::F32).unwrap();
        let z = LatentMap::random(1, cfg.latent_channels, 8, 8, 1, DType::F32).unwrap();
        let empty = plan_schedule((64, 64), (64, 64), 2.0).unwrap();
        let out = run_extrapolation(&model, &z, &empty, |_, _| Ok(())).unwrap();
        let direct = model
            .decoder
            .decode_image(&z, TargetResolution::new(64, 64).unwrap())
            .unwrap();
        assert_eq!(out, direct);

        let one = plan_schedule((32, 32), (64, 64), 2.0).unwrap();
        assert_eq!(run_extrapolation(&model, &z, &one, |_, _| Ok(())).unwrap().dims(), (64, 64));

        let two = plan_schedule((16, 16), (64, 64), 2.0).unwrap();
        let mut seen = Vec::new();
        let out = run_extrapolation(&model, &z, &two, |i, im| {
            seen.push((i, im.dims()));
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![(1, (32, 32)), (2, (64, 64))]);
        assert_eq!(out.dims(), (64, 64));
        assert!(run_extrapolation(&model, &z, &plan_schedule((64, 64), (128, 128), 2.0).unwrap(), |_, _| Ok(())).is_err());
    }

    proptest! {
        #[test]
        fn plan_reaches_target(bh in 8usize..300, bw in 8usize..300, mh in 1.0f64..20.0, mw in 1.0f64..20.0, cap in 1.1f64..4.0) {
            let th = (bh as f64 * mh).round() as usize;
            let tw = (bw as f64 * mw).round() as usize;
            let p = plan_schedule((bh, bw), (th, tw), cap).unwrap();
            let (fh, fw) = p.final_product();
            prop_assert!((fh - th as f64).abs() <= 1.0 && (fw - tw as f64).abs() <= 1.0);
            for &(sh, sw) in &p.steps {
                prop_assert!(sh >= 1.0 - EPS && sh <= cap + EPS);
                prop_assert!(sw >= 1.0 - EPS && sw <= cap + EPS);
            }
            let r = p.resolutions();
            if let Some((last, mid)) = r.split_last() {
                prop_assert_eq!(*last, (th, tw));
                prop_assert!(mid.iter().all(|&(h, w)| h % 8 == 0 && w % 8 == 0));
            }
        }
    }
}
