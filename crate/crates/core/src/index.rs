use alloc::collections::BTreeMap;
use alloc::vec::Vec;

/// Insertion-ordered set with dense indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Indexer<T: Ord + Clone> {
    items: Vec<T>,
    positions: BTreeMap<T, usize>,
}

impl<T: Ord + Clone> Default for Indexer<T> {
    fn default() -> Self {
        Indexer {
            items: Vec::new(),
            positions: BTreeMap::new(),
        }
    }
}

impl<T: Ord + Clone> Indexer<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Index of `item`, inserting it at the end if absent.
    pub fn insert(&mut self, item: T) -> usize {
        if let Some(&i) = self.positions.get(&item) {
            return i;
        }
        let i = self.items.len();
        self.positions.insert(item.clone(), i);
        self.items.push(item);
        i
    }

    pub fn get<Q>(&self, item: &Q) -> Option<usize>
    where
        T: core::borrow::Borrow<Q>,
        Q: Ord + ?Sized,
    {
        self.positions.get(item).copied()
    }

    pub fn item(&self, index: usize) -> Option<&T> {
        self.items.get(index)
    }

    pub fn items(&self) -> &[T] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

impl<T: Ord + Clone> FromIterator<T> for Indexer<T> {
    fn from_iter<I: IntoIterator<Item = T>>(iter: I) -> Self {
        let mut indexer = Indexer::new();
        for item in iter {
            indexer.insert(item);
        }
        indexer
    }
}
