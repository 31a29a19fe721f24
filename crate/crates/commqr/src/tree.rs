//! Reduction trees over `P` leaves.
//!
//! Text form, one line per level:
//!
//! ```text
//! (0,1)->0 (2,3)->2
//! (0,2)->0
//! ```

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CombineStep {
    pub participants: Vec<usize>,
    pub survivor: usize,
}

impl CombineStep {
    pub fn new(participants: Vec<usize>, survivor: usize) -> Self {
        CombineStep {
            participants,
            survivor,
        }
    }

    /// Participants other than the survivor, in listed order.
    pub fn senders(&self) -> impl Iterator<Item = usize> + '_ {
        self.participants
            .iter()
            .copied()
            .filter(move |&p| p != self.survivor)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TreeShape {
    Flat,
    Binary,
    Qary(usize),
    Custom(String),
}

impl std::str::FromStr for TreeShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flat" => Ok(TreeShape::Flat),
            "binary" => Ok(TreeShape::Binary),
            _ => {
                let q = s
                    .strip_prefix("qary:")
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown tree shape `{s}`")))?;
                let q: usize = q
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad arity in `{s}`")))?;
                if q < 2 {
                    return Err(Error::InvalidArgument("qary needs q >= 2".into()));
                }
                Ok(TreeShape::Qary(q))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReductionTree {
    leaf_count: usize,
    levels: Vec<Vec<CombineStep>>,
}

impl ReductionTree {
    /// Build and validate a tree from explicit levels.
    pub fn new(leaf_count: usize, levels: Vec<Vec<CombineStep>>) -> Result<Self> {
        let t = ReductionTree { leaf_count, levels };
        t.validate()?;
        Ok(t)
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_count
    }

    pub fn levels(&self) -> &[Vec<CombineStep>] {
        &self.levels
    }

    pub fn steps(&self) -> impl Iterator<Item = (usize, &CombineStep)> {
        self.levels
            .iter()
            .enumerate()
            .flat_map(|(l, steps)| steps.iter().map(move |s| (l, s)))
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.leaf_count;
        if p == 0 {
            return Err(Error::InvalidArgument(
                "tree needs at least one leaf".into(),
            ));
        }
        let mut alive = vec![true; p];
        for (l, level) in self.levels.iter().enumerate() {
            let mut busy = vec![false; p];
            for step in level {
                if step.participants.len() < 2 {
                    return Err(Error::InvalidArgument(format!(
                        "level {l}: a combine step needs at least two participants"
                    )));
                }
                if !step.participants.contains(&step.survivor) {
                    return Err(Error::InvalidArgument(format!(
                        "level {l}: survivor {} is not a participant",
                        step.survivor
                    )));
                }
                for &id in &step.participants {
                    if id >= p {
                        return Err(Error::InvalidArgument(format!(
                            "level {l}: node {id} out of range for {p} leaves"
                        )));
                    }
                    if !alive[id] {
                        return Err(Error::InvalidArgument(format!(
                            "level {l}: node {id} was already consumed"
                        )));
                    }
                    if busy[id] {
                        return Err(Error::InvalidArgument(format!(
                            "level {l}: node {id} used twice"
                        )));
                    }
                    busy[id] = true;
                }
                for id in step.senders() {
                    alive[id] = false;
                }
            }
        }
        let roots = alive.iter().filter(|&&a| a).count();
        if roots != 1 {
            return Err(Error::InvalidArgument(format!(
                "tree leaves {roots} unreduced nodes"
            )));
        }
        Ok(())
    }

    pub fn root(&self) -> usize {
        self.levels
            .iter()
            .rev()
            .find_map(|l| l.last().map(|s| s.survivor))
            .unwrap_or(0)
    }

    /// Number of combine steps on the longest leaf-to-root chain.
    pub fn critical_path_length(&self) -> usize {
        let mut depth = vec![0usize; self.leaf_count];
        for level in &self.levels {
            for step in level {
                let d = step
                    .participants
                    .iter()
                    .map(|&i| depth[i])
                    .max()
                    .unwrap_or(0)
                    + 1;
                depth[step.survivor] = d;
            }
        }
        depth[self.root()]
    }

    /// Parse the one-line-per-level text form.
    pub fn parse(text: &str, leaf_count: usize) -> Result<Self> {
        let mut levels = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut steps = Vec::new();
            for tok in line.split_whitespace() {
                steps.push(
                    parse_step(tok).map_err(|e| Error::Parse(format!("line {}: {e}", ln + 1)))?,
                );
            }
            levels.push(steps);
        }
        Self::new(leaf_count, levels)
    }
}

fn parse_step(tok: &str) -> std::result::Result<CombineStep, String> {
    let (lhs, rhs) = tok
        .split_once("->")
        .ok_or_else(|| format!("`{tok}` lacks `->`"))?;
    let inner = lhs
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| format!("`{lhs}` is not parenthesized"))?;
    let participants = inner
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| format!("bad node id `{s}`"))
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let survivor = rhs
        .trim()
        .parse::<usize>()
        .map_err(|_| format!("bad survivor `{rhs}`"))?;
    Ok(CombineStep {
        participants,
        survivor,
    })
}

impl fmt::Display for ReductionTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for level in &self.levels {
            let parts: Vec<String> = level
                .iter()
                .map(|s| {
                    let ids: Vec<String> = s.participants.iter().map(|i| i.to_string()).collect();
                    format!("({})->{}", ids.join(","), s.survivor)
                })
                .collect();
            writeln!(f, "{}", parts.join(" "))?;
        }
        Ok(())
    }
}

fn grouped(p: usize, q: usize) -> Vec<Vec<CombineStep>> {
    let mut survivors: Vec<usize> = (0..p).collect();
    let mut levels = Vec::new();
    while survivors.len() > 1 {
        let mut level = Vec::new();
        let mut next = Vec::new();
        for group in survivors.chunks(q) {
            if group.len() > 1 {
                level.push(CombineStep::new(group.to_vec(), group[0]));
            }
            next.push(group[0]);
        }
        levels.push(level);
        survivors = next;
    }
    levels
}

pub fn make_tree(shape: &TreeShape, p: usize) -> Result<ReductionTree> {
    if p == 0 {
        return Err(Error::InvalidArgument("P must be at least 1".into()));
    }
    let levels = match shape {
        TreeShape::Flat => (1..p)
            .map(|k| vec![CombineStep::new(vec![0, k], 0)])
            .collect(),
        TreeShape::Binary => grouped(p, 2),
        TreeShape::Qary(q) if *q >= 2 => grouped(p, *q),
        TreeShape::Qary(q) => {
            return Err(Error::InvalidArgument(format!(
                "qary needs q >= 2, got {q}"
            )))
        }
        TreeShape::Custom(text) => return ReductionTree::parse(text, p),
    };
    ReductionTree::new(p, levels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(p: &[usize], s: usize) -> CombineStep {
        CombineStep::new(p.to_vec(), s)
    }

    #[test]
    fn binary_four() {
        let t = make_tree(&TreeShape::Binary, 4).unwrap();
        assert_eq!(
            t.levels(),
            &[
                vec![step(&[0, 1], 0), step(&[2, 3], 2)],
                vec![step(&[0, 2], 0)]
            ]
        );
    }

    #[test]
    fn flat_four() {
        let t = make_tree(&TreeShape::Flat, 4).unwrap();
        let steps: Vec<_> = t.steps().map(|(_, s)| s.clone()).collect();
        assert_eq!(
            steps,
            vec![step(&[0, 1], 0), step(&[0, 2], 0), step(&[0, 3], 0)]
        );
    }

    #[test]
    fn single_leaf() {
        let t = make_tree(&TreeShape::Binary, 1).unwrap();
        assert!(t.levels().is_empty());
        assert_eq!(t.root(), 0);
        assert_eq!(t.critical_path_length(), 0);
    }

    #[test]
    fn path_lengths() {
        assert_eq!(
            make_tree(&TreeShape::Binary, 8)
                .unwrap()
                .critical_path_length(),
            3
        );
        assert_eq!(
            make_tree(&TreeShape::Flat, 5)
                .unwrap()
                .critical_path_length(),
            4
        );
        assert_eq!(
            make_tree(&TreeShape::Qary(4), 16)
                .unwrap()
                .critical_path_length(),
            2
        );
        assert_eq!(
            make_tree(&TreeShape::Binary, 5)
                .unwrap()
                .critical_path_length(),
            3
        );
    }

    #[test]
    fn zero_leaves_rejected() {
        assert!(make_tree(&TreeShape::Flat, 0).is_err());
        assert!(make_tree(&TreeShape::Qary(1), 4).is_err());
    }

    #[test]
    fn text_roundtrip() {
        let t = make_tree(&TreeShape::Qary(3), 7).unwrap();
        let back = ReductionTree::parse(&t.to_string(), 7).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn reuse_of_consumed_node_fails() {
        let text = "(0,1)->0 (2,3)->2\n(1,2)->2\n";
        assert!(ReductionTree::parse(text, 4).is_err());
    }

    #[test]
    fn parse_errors() {
        assert!(ReductionTree::parse("(0,1)", 2).is_err());
        assert!(ReductionTree::parse("0,1->0", 2).is_err());
        assert!(ReductionTree::parse("(0,x)->0", 2).is_err());
        assert!(ReductionTree::parse("(0,1)->2", 2).is_err());
        assert!(ReductionTree::parse("", 2).is_err());
        assert!(ReductionTree::parse("(0,0)->0\n(0,1)->0", 2).is_err());
    }
}
