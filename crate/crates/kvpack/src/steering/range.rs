//! Layer range selection: the whole stack, one of its terciles, or an
//! explicit index list.

use std::fmt;
use std::str::FromStr;

use super::SteerError;

/// Which layers a steering application touches. The three terciles
/// partition the stack: early is `[0, L/3)`, mid is `[L/3, 2L/3)`, late is
/// `[2L/3, L)` with floor division.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerRange {
    All,
    Early,
    Mid,
    Late,
    Explicit(Vec<usize>),
}

impl LayerRange {
    /// Concrete ascending layer indices for an `n_layers` stack.
    pub fn resolve(&self, n_layers: usize) -> Vec<usize> {
        let lo = n_layers / 3;
        let hi = 2 * n_layers / 3;
        match self {
            LayerRange::All => (0..n_layers).collect(),
            LayerRange::Early => (0..lo).collect(),
            LayerRange::Mid => (lo..hi).collect(),
            LayerRange::Late => (hi..n_layers).collect(),
            LayerRange::Explicit(v) => {
                let mut v = v.clone();
                v.sort_unstable();
                v.dedup();
                v
            }
        }
    }
}

impl FromStr for LayerRange {
    type Err = SteerError;

    /// Accepts `all`, `early`, `mid`, `late`, a comma list (`0,2,5`), or an
    /// inclusive span (`3-7`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => return Ok(LayerRange::All),
            "early" => return Ok(LayerRange::Early),
            "mid" => return Ok(LayerRange::Mid),
            "late" => return Ok(LayerRange::Late),
            _ => {}
        }
        let bad = || SteerError::BadRange(s.to_string());
        if let Some((a, b)) = s.split_once('-') {
            let lo: usize = a.trim().parse().map_err(|_| bad())?;
            let hi: usize = b.trim().parse().map_err(|_| bad())?;
            if lo > hi {
                return Err(bad());
            }
            return Ok(LayerRange::Explicit((lo..=hi).collect()));
        }
        let indices: Result<Vec<usize>, _> =
            s.split(',').map(|p| p.trim().parse::<usize>()).collect();
        match indices {
            Ok(v) if !v.is_empty() => Ok(LayerRange::Explicit(v)),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for LayerRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerRange::All => write!(f, "all"),
            LayerRange::Early => write!(f, "early"),
            LayerRange::Mid => write!(f, "mid"),
            LayerRange::Late => write!(f, "late"),
            LayerRange::Explicit(v) => {
                let parts: Vec<String> = v.iter().map(|i| i.to_string()).collect();
                write!(f, "{}", parts.join(","))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn terciles_partition_the_stack() {
        for n in [3, 4, 5, 6, 32, 36] {
            let early = LayerRange::Early.resolve(n);
            let mid = LayerRange::Mid.resolve(n);
            let late = LayerRange::Late.resolve(n);
            let mut all: Vec<usize> = early.iter().chain(&mid).chain(&late).copied().collect();
            all.sort_unstable();
            assert_eq!(all, LayerRange::All.resolve(n), "n = {n}");
        }
    }

    #[test]
    fn mid_of_36_is_12_through_23() {
        assert_eq!(LayerRange::Mid.resolve(36), (12..24).collect::<Vec<_>>());
    }

    #[test]
    fn desk_scale_terciles_are_distinct() {
        assert_eq!(LayerRange::Early.resolve(4), vec![0]);
        assert_eq!(LayerRange::Mid.resolve(4), vec![1]);
        assert_eq!(LayerRange::Late.resolve(4), vec![2, 3]);
    }

    #[test]
    fn parse_forms() {
        assert_eq!("all".parse::<LayerRange>().unwrap(), LayerRange::All);
        assert_eq!("mid".parse::<LayerRange>().unwrap(), LayerRange::Mid);
        assert_eq!(
            "0,2,5".parse::<LayerRange>().unwrap(),
            LayerRange::Explicit(vec![0, 2, 5])
        );
        assert_eq!(
            "3-5".parse::<LayerRange>().unwrap(),
            LayerRange::Explicit(vec![3, 4, 5])
        );
        assert!("whatever".parse::<LayerRange>().is_err());
        assert!("5-3".parse::<LayerRange>().is_err());
    }

    #[test]
    fn explicit_resolve_sorts_and_dedups() {
        let r = LayerRange::Explicit(vec![5, 1, 5, 3]);
        assert_eq!(r.resolve(8), vec![1, 3, 5]);
    }
}
