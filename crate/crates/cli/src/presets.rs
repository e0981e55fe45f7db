//! Predefined figure experiments. The fig2 presets sweep the cluster size
//! with empirical replications overlaid on the formulas; the fig3/fig4
//! presets sweep confounder effects at n = 200 and evaluate the formulas
//! only (an `--empirical` run adds Monte Carlo overlays).

use std::path::PathBuf;

use confound_core::{ConfounderMode, Method, ScenarioConfig};

use crate::config::ExperimentSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FigurePreset {
    Fig2TopW,
    Fig2MidB,
    Fig2BottomWb,
    Fig3TopWEffects,
    Fig3BottomBEffects,
    Fig4WbEffects,
}

/// Cluster sizes swept by the fig2 presets; wide enough to show both the
/// n = 1 coincidence with OLS and the large-n decay of the IV bias.
const FIG2_N_VALUES: [f64; 9] = [1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 400.0];

/// Outcome-effect sweep used by the fig3/fig4 presets.
const EFFECT_VALUES: [f64; 9] = [-1.0, -0.75, -0.5, -0.25, 0.0, 0.25, 0.5, 0.75, 1.0];

impl FigurePreset {
    pub const ALL: [FigurePreset; 6] = [
        FigurePreset::Fig2TopW,
        FigurePreset::Fig2MidB,
        FigurePreset::Fig2BottomWb,
        FigurePreset::Fig3TopWEffects,
        FigurePreset::Fig3BottomBEffects,
        FigurePreset::Fig4WbEffects,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            FigurePreset::Fig2TopW => "fig2_top_W",
            FigurePreset::Fig2MidB => "fig2_mid_B",
            FigurePreset::Fig2BottomWb => "fig2_bottom_WB",
            FigurePreset::Fig3TopWEffects => "fig3_top_W_effects",
            FigurePreset::Fig3BottomBEffects => "fig3_bottom_B_effects",
            FigurePreset::Fig4WbEffects => "fig4_WB_effects",
        }
    }

    pub fn parse(name: &str) -> Option<FigurePreset> {
        FigurePreset::ALL.iter().copied().find(|p| p.name() == name)
    }

    /// The fully specified experiment this preset stands for.
    pub fn expand(&self) -> ExperimentSpec {
        let mut base = ScenarioConfig::defaults();
        let (axis, values, empirical): (&str, &[f64], bool) = match self {
            FigurePreset::Fig2TopW => {
                base.confounder_mode = ConfounderMode::WOnly;
                ("n", &FIG2_N_VALUES, true)
            }
            FigurePreset::Fig2MidB => {
                base.confounder_mode = ConfounderMode::BOnly;
                ("n", &FIG2_N_VALUES, true)
            }
            FigurePreset::Fig2BottomWb => {
                base.confounder_mode = ConfounderMode::WAndB;
                ("n", &FIG2_N_VALUES, true)
            }
            FigurePreset::Fig3TopWEffects => {
                base.confounder_mode = ConfounderMode::WOnly;
                base.n = 200;
                ("beta_1w", &EFFECT_VALUES, false)
            }
            FigurePreset::Fig3BottomBEffects => {
                base.confounder_mode = ConfounderMode::BOnly;
                base.n = 200;
                ("beta_1b", &EFFECT_VALUES, false)
            }
            FigurePreset::Fig4WbEffects => {
                base.confounder_mode = ConfounderMode::WAndB;
                base.n = 200;
                ("beta_1w", &EFFECT_VALUES, false)
            }
        };
        ExperimentSpec {
            name: self.name().to_string(),
            base,
            axis: axis.to_string(),
            values: values.to_vec(),
            reps: 1000,
            methods: Method::ALL.to_vec(),
            empirical,
            agreement_z: 3.0,
            csv_path: PathBuf::from(format!("{}.csv", self.name())),
            svg_path: Some(PathBuf::from(format!("{}.svg", self.name()))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for preset in FigurePreset::ALL {
            assert_eq!(FigurePreset::parse(preset.name()), Some(preset));
        }
        assert_eq!(FigurePreset::parse("fig9"), None);
    }

    #[test]
    fn effect_presets_are_analytic_only_at_n_200() {
        for preset in [
            FigurePreset::Fig3TopWEffects,
            FigurePreset::Fig3BottomBEffects,
            FigurePreset::Fig4WbEffects,
        ] {
            let spec = preset.expand();
            assert!(!spec.empirical);
            assert_eq!(spec.base.n, 200);
        }
        let spec = FigurePreset::Fig3BottomBEffects.expand();
        assert_eq!(spec.axis, "beta_1b");
    }
}
