use super::Sentence;

/// Symmetric word-level adjacency of the dependency tree, with self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyMatrix {
    n: usize,
    bits: Vec<bool>,
}

impl AdjacencyMatrix {
    /// Builds from 1-based `(head, dependent)` edges; root edges are ignored.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut bits = vec![false; n * n];
        for &(h, d) in edges {
            if h == 0 || d == 0 || h > n || d > n {
                continue;
            }
            bits[(h - 1) * n + (d - 1)] = true;
            bits[(d - 1) * n + (h - 1)] = true;
        }
        for i in 0..n {
            bits[i * n + i] = true;
        }
        Self { n, bits }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// 0-based node indices.
    pub fn connected(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&j| self.connected(i, j))
    }

    /// Relabels nodes so that new node `k` is old node `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n;
        let mut bits = vec![false; n * n];
        for a in 0..n {
            for b in 0..n {
                bits[a * n + b] = self.connected(perm[a], perm[b]);
            }
        }
        Self { n, bits }
    }
}

pub fn build_adjacency(s: &Sentence) -> AdjacencyMatrix {
    AdjacencyMatrix::from_edges(s.len(), &s.dep_edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    #[test]
    fn three_word_tree() {
        let a = AdjacencyMatrix::from_edges(3, &[(2, 1), (2, 3), (0, 2)]);
        let t = |i: usize, j: usize| a.connected(i - 1, j - 1);
        assert!(t(1, 2) && t(2, 1) && t(2, 3) && t(3, 2));
        assert!(t(1, 1) && t(2, 2) && t(3, 3));
        assert!(!t(1, 3) && !t(3, 1));
    }

    #[test]
    fn single_word() {
        let a = AdjacencyMatrix::from_edges(1, &[(0, 1)]);
        assert_eq!(a.bits(), &[true]);
    }

    fn random_tree(n: usize, picks: &[usize]) -> Vec<(usize, usize)> {
        // word 1 is the root; every later word attaches to an earlier one
        let mut edges = vec![(0, 1)];
        for d in 2..=n {
            edges.push((1 + picks[d - 2] % (d - 1), d));
        }
        edges
    }

    proptest! {
        #[test]
        fn matches_edge_list_oracle(picks in proptest::collection::vec(0usize..1000, 7)) {
            let n = 8;
            let edges = random_tree(n, &picks);
            let a = AdjacencyMatrix::from_edges(n, &edges);
            let mut expected = BTreeSet::new();
            for &(h, d) in &edges {
                if h > 0 {
                    expected.insert((h - 1, d - 1));
                    expected.insert((d - 1, h - 1));
                }
            }
            for i in 0..n {
                expected.insert((i, i));
            }
            for i in 0..n {
                for j in 0..n {
                    prop_assert_eq!(a.connected(i, j), expected.contains(&(i, j)));
                }
            }
        }

        #[test]
        fn symmetric_with_true_diagonal(n in 1usize..12, picks in proptest::collection::vec(0usize..1000, 11)) {
            let a = AdjacencyMatrix::from_edges(n, &random_tree(n, &picks));
            for i in 0..n {
                prop_assert!(a.connected(i, i));
                for j in 0..n {
                    prop_assert_eq!(a.connected(i, j), a.connected(j, i));
                }
            }
        }
    }
}
