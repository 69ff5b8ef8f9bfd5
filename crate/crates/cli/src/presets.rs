//! Built-in experiment presets, embedded at compile time.

pub struct Preset {
    pub name: &'static str,
    pub text: &'static str,
}

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "snell_crosscheck",
        text: include_str!("../presets/snell_crosscheck.toml"),
    },
    Preset {
        name: "american_tree",
        text: include_str!("../presets/american_tree.toml"),
    },
    Preset {
        name: "random_horizon_drift",
        text: include_str!("../presets/random_horizon_drift.toml"),
    },
    Preset {
        name: "infinite_horizon_decay",
        text: include_str!("../presets/infinite_horizon_decay.toml"),
    },
    Preset {
        name: "neumann_manufactured",
        text: include_str!("../presets/neumann_manufactured.toml"),
    },
    Preset {
        name: "feynman_kac_compare",
        text: include_str!("../presets/feynman_kac_compare.toml"),
    },
];

pub fn find(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}

impl Preset {
    /// The `description` line of the preset file.
    pub fn description(&self) -> String {
        self.text
            .lines()
            .find_map(|l| l.strip_prefix("description = "))
            .map(|d| d.trim_matches('"').to_string())
            .unwrap_or_default()
    }
}

/// `(name, description)` for every preset, in a fixed order.
pub fn list_presets() -> Vec<(&'static str, String)> {
    PRESETS.iter().map(|p| (p.name, p.description())).collect()
}
