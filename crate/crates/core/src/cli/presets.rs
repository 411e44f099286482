//! Built-in scenarios: the five-cell spectrum, line dynamics and swarms, and
//! the two grid reconstructions.

use std::path::Path;

use super::config::{Scenario, Source};
use crate::error::{Error, Result};

pub const PRESET_NAMES: [&str; 6] = ["fig1", "fig2", "fig3", "fig4", "fig5", "fig7"];

/// 10 × 12 grid with 25 blocked cells (95 free).
pub const ARROW_MAP: &str = "grid 10 12
...........#
...........#
............
............
............
............
............
#####.......
#####...####
#####...####
";

/// Right-pointing arrow on [`ARROW_MAP`].
pub const ARROW_SHAPE: &str = "grid 10 12
...........#
.......X...#
.......XX...
.XXXXXXXXX..
.XXXXXXXXXX.
.XXXXXXXXX..
.......XX...
#####..X....
#####...####
#####...####
";

/// Open 10 × 12 grid (120 free cells).
pub const OPEN_MAP: &str = "grid 10 12
............
............
............
............
............
............
............
............
............
............
";

/// Ring around the centre of [`OPEN_MAP`].
pub const ANNULUS_SHAPE: &str = "grid 10 12
............
.....XX.....
...XXXXXX...
...XX..XX...
..XX....XX..
..XX....XX..
...XX..XX...
...XXXXXX...
.....XX.....
............
";

const FIG1: &str = "
[scenario]
mode = eigen
[environment]
line = 5
";

const FIG2: &str = "
[scenario]
mode = dynamics
start = 1
[environment]
line = 5
[dynamics]
matrix = transition
snapshots = 0,1,2,3,5,10,20,50
max_steps = 2000
";

const FIG3: &str = "
[scenario]
mode = swarm-unweighted
seed = 1
start = 1
[environment]
line = 20
[design]
harmonic = 1
[dynamics]
matrix = transition
[swarm]
robots = 20000
steps = 500
stride = 50
";

const FIG4: &str = "
[scenario]
mode = dynamics
seed = 1
start = 1
[environment]
line = 20
[design]
harmonic = 5
method = closed-form
order = 4
beta = 0.7
[dynamics]
matrix = attractor
snapshots = 1,20,50,200
[swarm]
robots = 200000
steps = 200
stride = 10
";

const FIG5: &str = "
[scenario]
mode = reconstruct
seed = 1
start = 0,0
exact_dynamics = true
[design]
method = optimized
order = 4
beta = 0
[shape]
count = 29
";

const FIG7: &str = "
[scenario]
mode = reconstruct
seed = 1
start = 0,0
exact_dynamics = true
[design]
method = optimized
order = 4
beta = 0
[shape]
count = 24
";

pub fn preset(name: &str) -> Result<Scenario> {
    let (text, map, shape) = match name {
        "fig1" => (FIG1, None, None),
        "fig2" => (FIG2, None, None),
        "fig3" => (FIG3, None, None),
        "fig4" => (FIG4, None, None),
        "fig5" => (FIG5, Some(OPEN_MAP), Some(ANNULUS_SHAPE)),
        "fig7" => (FIG7, Some(ARROW_MAP), Some(ARROW_SHAPE)),
        _ => {
            return Err(Error::Config(format!(
                "unknown preset `{name}`; choose from {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    // shape is attached after parsing, so validation of reconstruct
    // scenarios has to wait until then
    let mut s = Scenario::parse(
        &text.replace("mode = reconstruct", "mode = eigen"),
        Path::new("."),
    )?;
    if let Some(m) = map {
        s.environment = Source::Inline(m.to_owned());
    }
    if let Some(sh) = shape {
        s.shape = Some(Source::Inline(sh.to_owned()));
        s.mode = super::config::Mode::Reconstruct;
    }
    s.validate()?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Environment;

    #[test]
    fn every_preset_parses() {
        for name in PRESET_NAMES {
            preset(name).unwrap();
        }
        assert!(preset("fig6").is_err());
    }

    #[test]
    fn preset_maps_have_the_stated_sizes() {
        let arrow = Environment::parse(ARROW_MAP).unwrap();
        assert_eq!(arrow.len(), 95);
        let w = arrow.parse_overlay(ARROW_SHAPE).unwrap();
        assert_eq!(w.iter().filter(|&&x| x == 1.0).count(), 34);
        let open = Environment::parse(OPEN_MAP).unwrap();
        assert_eq!(open.len(), 120);
        open.parse_overlay(ANNULUS_SHAPE).unwrap();
    }
}
