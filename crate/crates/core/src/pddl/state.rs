/// Index of a ground atom inside a [`GroundedTask`](super::GroundedTask).
/// Atom ids follow canonical (lexicographic rendering) order.
pub type AtomId = u32;

/// A set of ground atoms stored as a fixed-width bitset.
///
/// Iteration yields atom ids in ascending order, which is the canonical
/// atom order of the owning task.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct SymbolicState {
    words: Vec<u64>,
}

impl SymbolicState {
    pub fn empty(num_atoms: usize) -> Self {
        Self { words: vec![0; num_atoms.div_ceil(64)] }
    }

    pub fn from_atoms(num_atoms: usize, atoms: impl IntoIterator<Item = AtomId>) -> Self {
        let mut s = Self::empty(num_atoms);
        for a in atoms {
            s.insert(a);
        }
        s
    }

    #[inline]
    pub fn contains(&self, atom: AtomId) -> bool {
        let (w, b) = (atom as usize / 64, atom % 64);
        self.words.get(w).is_some_and(|x| x >> b & 1 == 1)
    }

    #[inline]
    pub fn insert(&mut self, atom: AtomId) {
        let (w, b) = (atom as usize / 64, atom % 64);
        if w >= self.words.len() {
            self.words.resize(w + 1, 0);
        }
        self.words[w] |= 1 << b;
    }

    #[inline]
    pub fn remove(&mut self, atom: AtomId) {
        let (w, b) = (atom as usize / 64, atom % 64);
        if let Some(x) = self.words.get_mut(w) {
            *x &= !(1 << b);
        }
    }

    pub fn contains_all(&self, atoms: &[AtomId]) -> bool {
        atoms.iter().all(|&a| self.contains(a))
    }

    pub fn is_subset(&self, other: &SymbolicState) -> bool {
        self.words
            .iter()
            .enumerate()
            .all(|(i, w)| w & !other.words.get(i).copied().unwrap_or(0) == 0)
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn iter(&self) -> impl Iterator<Item = AtomId> + '_ {
        self.words.iter().enumerate().flat_map(|(i, &w)| {
            let mut bits = w;
            std::iter::from_fn(move || {
                if bits == 0 {
                    return None;
                }
                let b = bits.trailing_zeros();
                bits &= bits - 1;
                Some(i as AtomId * 64 + b)
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn behaves_like_a_sorted_set(atoms in proptest::collection::btree_set(0u32..300, 0..60)) {
            let s = SymbolicState::from_atoms(300, atoms.iter().copied());
            prop_assert_eq!(s.len(), atoms.len());
            prop_assert_eq!(s.iter().collect::<Vec<_>>(), atoms.iter().copied().collect::<Vec<_>>());
            for a in 0..300 {
                prop_assert_eq!(s.contains(a), atoms.contains(&a));
            }
        }
    }

    #[test]
    fn subset_and_remove() {
        let mut a = SymbolicState::from_atoms(130, [1, 64, 129]);
        let b = SymbolicState::from_atoms(130, [1, 2, 64, 129]);
        assert!(a.is_subset(&b));
        assert!(!b.is_subset(&a));
        a.remove(64);
        assert_eq!(a.iter().collect::<Vec<_>>(), vec![1, 129]);
        assert!(SymbolicState::empty(10).is_subset(&a));
    }
}
