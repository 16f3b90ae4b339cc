//! Scenarios shipped with the binary, one per figure plus the quantum checks.

pub const BUILTIN: [(&str, &str); 9] = [
    ("fig1a", include_str!("../scenarios/fig1a.toml")),
    ("fig1b", include_str!("../scenarios/fig1b.toml")),
    ("fig2a", include_str!("../scenarios/fig2a.toml")),
    ("fig2b", include_str!("../scenarios/fig2b.toml")),
    ("fig3", include_str!("../scenarios/fig3.toml")),
    ("fig4", include_str!("../scenarios/fig4.toml")),
    ("howland", include_str!("../scenarios/howland.toml")),
    ("lemma1-spin", include_str!("../scenarios/lemma1-spin.toml")),
    ("classical-limit", include_str!("../scenarios/classical-limit.toml")),
];

pub fn builtin(name: &str) -> Option<&'static str> {
    BUILTIN.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}
