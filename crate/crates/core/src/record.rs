//! Records, type patterns and best-match routing.
//!
//! A [`Record`] is the unit of stream communication: a set of named, opaque
//! field payloads plus named integer tags. The coordination layer only ever
//! looks at the *names* of fields and at tag values; field payloads are
//! shared, immutable handles that only boxes downcast.

use std::any::Any;
use std::borrow::Cow;
use std::fmt;
use std::sync::Arc;

use smallvec::SmallVec;

use crate::error::RecordError;

/// Field or tag name. Literal names borrow, dynamic names own.
pub type Name = Cow<'static, str>;

/// Opaque, immutable, shareable field value.
pub type Payload = Arc<dyn Any + Send + Sync>;

/// Small map kept sorted by name. Records carry a handful of names, so a
/// linear scan over an inline vector beats a tree.
#[derive(Clone)]
struct NameMap<V, const N: usize>(SmallVec<[(Name, V); N]>);

impl<V, const N: usize> Default for NameMap<V, N> {
    fn default() -> Self {
        Self(SmallVec::new())
    }
}

impl<V, const N: usize> NameMap<V, N> {
    fn position(&self, name: &str) -> Result<usize, usize> {
        self.0.binary_search_by(|(k, _)| k.as_ref().cmp(name))
    }

    fn get(&self, name: &str) -> Option<&V> {
        self.position(name).ok().map(|i| &self.0[i].1)
    }

    fn contains_key(&self, name: &str) -> bool {
        self.0.iter().any(|(k, _)| k == name)
    }

    fn insert(&mut self, name: Name, value: V) {
        match self.position(&name) {
            Ok(i) => self.0[i].1 = value,
            Err(i) => self.0.insert(i, (name, value)),
        }
    }

    fn remove(&mut self, name: &str) -> Option<V> {
        self.position(name).ok().map(|i| self.0.remove(i).1)
    }

    fn iter(&self) -> impl Iterator<Item = (&Name, &V)> {
        self.0.iter().map(|(k, v)| (k, v))
    }

    fn keys(&self) -> impl Iterator<Item = &Name> {
        self.0.iter().map(|(k, _)| k)
    }

    fn len(&self) -> usize {
        self.0.len()
    }

    fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<V, const N: usize> IntoIterator for NameMap<V, N> {
    type Item = (Name, V);
    type IntoIter = smallvec::IntoIter<[(Name, V); N]>;
    fn into_iter(self) -> Self::IntoIter {
        self.0.into_iter()
    }
}

#[derive(Clone, Default)]
pub struct Record {
    fields: NameMap<Payload, 4>,
    tags: NameMap<i64, 6>,
}

impl Record {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builder form of [`Record::insert_field`].
    ///
    /// Panics if `name` is already used by a field or a tag.
    pub fn with_field<T: Any + Send + Sync>(mut self, name: impl Into<Name>, value: T) -> Self {
        self.insert_payload(name, Arc::new(value)).expect("record name clash");
        self
    }

    /// Like [`Record::with_field`] but for a value that is already shared.
    pub fn with_payload(mut self, name: impl Into<Name>, value: Payload) -> Self {
        self.insert_payload(name, value).expect("record name clash");
        self
    }

    /// Panics if `name` is already used by a field or a tag.
    pub fn with_tag(mut self, name: impl Into<Name>, value: i64) -> Self {
        self.insert_tag(name, value).expect("record name clash");
        self
    }

    pub fn insert_field<T: Any + Send + Sync>(
        &mut self,
        name: impl Into<Name>,
        value: T,
    ) -> Result<(), RecordError> {
        self.insert_payload(name, Arc::new(value))
    }

    pub fn insert_payload(&mut self, name: impl Into<Name>, value: Payload) -> Result<(), RecordError> {
        let name = name.into();
        if self.fields.contains_key(&name) || self.tags.contains_key(&name) {
            return Err(RecordError::NameClash(name.into_owned()));
        }
        self.fields.insert(name, value);
        Ok(())
    }

    pub fn insert_tag(&mut self, name: impl Into<Name>, value: i64) -> Result<(), RecordError> {
        let name = name.into();
        if self.fields.contains_key(&name) || self.tags.contains_key(&name) {
            return Err(RecordError::NameClash(name.into_owned()));
        }
        self.tags.insert(name, value);
        Ok(())
    }

    /// Overwrites an existing tag or adds a new one.
    pub fn set_tag(&mut self, name: impl Into<Name>, value: i64) -> Result<(), RecordError> {
        let name = name.into();
        if self.fields.contains_key(&name) {
            return Err(RecordError::NameClash(name.into_owned()));
        }
        self.tags.insert(name, value);
        Ok(())
    }

    pub fn field<T: Any>(&self, name: &str) -> Option<&T> {
        self.fields.get(name).and_then(|p| p.downcast_ref::<T>())
    }

    pub fn payload(&self, name: &str) -> Option<&Payload> {
        self.fields.get(name)
    }

    /// Removes a field and returns it as a typed shared handle. Returns
    /// `None` (leaving the record untouched) when the field is missing or
    /// has a different type.
    pub fn take_field<T: Any + Send + Sync>(&mut self, name: &str) -> Option<Arc<T>> {
        let payload = self.fields.get(name)?;
        if !payload.is::<T>() {
            return None;
        }
        let payload = self.fields.remove(name)?;
        payload.downcast::<T>().ok()
    }

    pub fn take_payload(&mut self, name: &str) -> Option<Payload> {
        self.fields.remove(name)
    }

    pub fn tag(&self, name: &str) -> Option<i64> {
        self.tags.get(name).copied()
    }

    pub fn remove_tag(&mut self, name: &str) -> Option<i64> {
        self.tags.remove(name)
    }

    pub fn has_field(&self, name: &str) -> bool {
        self.fields.contains_key(name)
    }

    pub fn has_tag(&self, name: &str) -> bool {
        self.tags.contains_key(name)
    }

    pub fn field_names(&self) -> impl Iterator<Item = &str> {
        self.fields.keys().map(|k| k.as_ref())
    }

    pub fn tag_names(&self) -> impl Iterator<Item = &str> {
        self.tags.keys().map(|k| k.as_ref())
    }

    pub fn tags(&self) -> impl Iterator<Item = (&str, i64)> {
        self.tags.iter().map(|(k, v)| (k.as_ref(), *v))
    }

    pub fn fields(&self) -> impl Iterator<Item = (&str, &Payload)> {
        self.fields.iter().map(|(k, v)| (k.as_ref(), v))
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty() && self.tags.is_empty()
    }

    /// Total number of names (fields plus tags).
    pub fn len(&self) -> usize {
        self.fields.len() + self.tags.len()
    }

    /// The record's type: its field and tag name sets.
    pub fn type_pattern(&self) -> TypePattern {
        TypePattern {
            fields: NameSet(self.fields.keys().cloned().collect()),
            tags: NameSet(self.tags.keys().cloned().collect()),
        }
    }
}

impl fmt::Debug for Record {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        let mut first = true;
        for name in self.fields.keys() {
            if !first {
                f.write_str(",")?;
            }
            first = false;
            f.write_str(name)?;
        }
        for (name, value) in self.tags.iter() {
            if !first {
                f.write_str(",")?;
            }
            first = false;
            write!(f, "<{name}={value}>")?;
        }
        f.write_str("}")
    }
}

/// Union of two records. On a name collision the entry of `earlier` wins.
///
/// A field in one record and a tag of the same name in the other also
/// counts as a collision; the earlier record's entry is kept, which keeps
/// the two name spaces disjoint.
pub fn merge_records(earlier: Record, later: Record) -> Record {
    let mut out = earlier;
    for (name, value) in later.fields {
        if !out.fields.contains_key(&name) && !out.tags.contains_key(&name) {
            out.fields.insert(name, value);
        }
    }
    for (name, value) in later.tags {
        if !out.fields.contains_key(&name) && !out.tags.contains_key(&name) {
            out.tags.insert(name, value);
        }
    }
    out
}

/// Sorted, duplicate-free name list.
#[derive(Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct NameSet(SmallVec<[Name; 4]>);

impl NameSet {
    fn insert(&mut self, name: Name) {
        if let Err(i) = self.0.binary_search(&name) {
            self.0.insert(i, name);
        }
    }

    fn extend(&mut self, names: impl IntoIterator<Item = Name>) {
        for n in names {
            self.insert(n);
        }
    }

    fn contains(&self, name: &str) -> bool {
        self.0.binary_search_by(|n| n.as_ref().cmp(name)).is_ok()
    }

    fn iter(&self) -> std::slice::Iter<'_, Name> {
        self.0.iter()
    }

    fn len(&self) -> usize {
        self.0.len()
    }

    fn is_subset(&self, other: &NameSet) -> bool {
        self.iter().all(|n| other.contains(n))
    }
}

impl<'a> IntoIterator for &'a NameSet {
    type Item = &'a Name;
    type IntoIter = std::slice::Iter<'a, Name>;
    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Subset pattern over field and tag names. The empty pattern matches
/// every record.
#[derive(Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TypePattern {
    fields: NameSet,
    tags: NameSet,
}

impl TypePattern {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn field(mut self, name: impl Into<Name>) -> Self {
        self.fields.insert(name.into());
        self
    }

    pub fn tag(mut self, name: impl Into<Name>) -> Self {
        self.tags.insert(name.into());
        self
    }

    pub fn fields<I, S>(mut self, names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<Name>,
    {
        self.fields.extend(names.into_iter().map(Into::into));
        self
    }

    pub fn tags<I, S>(mut self, names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<Name>,
    {
        self.tags.extend(names.into_iter().map(Into::into));
        self
    }

    /// Parses the textual form `{A,L,<k>}`; braces are optional.
    pub fn parse(text: &str) -> Result<Self, RecordError> {
        let trimmed = text.trim();
        let body = trimmed
            .strip_prefix('{')
            .and_then(|s| s.strip_suffix('}'))
            .unwrap_or(trimmed);
        let mut pattern = TypePattern::new();
        for item in body.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            if let Some(tag) = item.strip_prefix('<').and_then(|s| s.strip_suffix('>')) {
                let tag = tag.trim();
                if tag.is_empty() {
                    return Err(RecordError::BadPattern(text.to_owned()));
                }
                pattern.tags.insert(Cow::Owned(tag.to_owned()));
            } else if item.contains(['<', '>', '{', '}']) {
                return Err(RecordError::BadPattern(text.to_owned()));
            } else {
                pattern.fields.insert(Cow::Owned(item.to_owned()));
            }
        }
        if pattern.fields.iter().any(|f| pattern.tags.contains(f)) {
            return Err(RecordError::BadPattern(text.to_owned()));
        }
        Ok(pattern)
    }

    pub fn required_fields(&self) -> impl Iterator<Item = &str> {
        self.fields.iter().map(|s| s.as_ref())
    }

    pub fn required_tags(&self) -> impl Iterator<Item = &str> {
        self.tags.iter().map(|s| s.as_ref())
    }

    pub fn requires_tag(&self, name: &str) -> bool {
        self.tags.contains(name)
    }

    pub fn requires_field(&self, name: &str) -> bool {
        self.fields.contains(name)
    }

    /// Number of required names; the best-match score.
    pub fn cardinality(&self) -> usize {
        self.fields.len() + self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cardinality() == 0
    }

    /// Componentwise subset.
    pub fn is_subset(&self, other: &TypePattern) -> bool {
        self.fields.is_subset(&other.fields) && self.tags.is_subset(&other.tags)
    }
}

impl fmt::Display for TypePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        let mut first = true;
        for name in &self.fields {
            if !first {
                f.write_str(",")?;
            }
            first = false;
            f.write_str(name)?;
        }
        for name in &self.tags {
            if !first {
                f.write_str(",")?;
            }
            first = false;
            write!(f, "<{name}>")?;
        }
        f.write_str("}")
    }
}

impl fmt::Debug for TypePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Input type plus the declared output types of a box.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoxSignature {
    pub input: TypePattern,
    pub outputs: Vec<TypePattern>,
}

impl BoxSignature {
    pub fn new(input: TypePattern, outputs: Vec<TypePattern>) -> Result<Self, RecordError> {
        if outputs.is_empty() {
            return Err(RecordError::NoOutputs);
        }
        Ok(Self { input, outputs })
    }

    /// Parses `"{A,<k>} -> {L} | {A,L,<k>}"`.
    pub fn parse(text: &str) -> Result<Self, RecordError> {
        let (input, outputs) = text
            .split_once("->")
            .ok_or_else(|| RecordError::BadPattern(text.to_owned()))?;
        let outputs = outputs
            .split('|')
            .map(TypePattern::parse)
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(TypePattern::parse(input)?, outputs)
    }

    /// True if `r` has a type compatible with at least one declared output.
    pub fn admits_output(&self, r: &Record) -> bool {
        self.outputs.iter().any(|p| matches(r, p))
    }
}

impl fmt::Display for BoxSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ->", self.input)?;
        for (i, out) in self.outputs.iter().enumerate() {
            if i > 0 {
                f.write_str(" |")?;
            }
            write!(f, " {out}")?;
        }
        Ok(())
    }
}

/// True iff every name required by `p` is present in `r`.
pub fn matches(r: &Record, p: &TypePattern) -> bool {
    p.fields.iter().all(|f| r.fields.contains_key(f)) && p.tags.iter().all(|t| r.tags.contains_key(t))
}

/// Index of the matching pattern with the most required names; ties go to
/// the lowest index.
pub fn best_match<'a, I>(r: &Record, patterns: I) -> Option<usize>
where
    I: IntoIterator<Item = &'a TypePattern>,
{
    let mut best: Option<(usize, usize)> = None;
    for (i, p) in patterns.into_iter().enumerate() {
        if !matches(r, p) {
            continue;
        }
        let score = p.cardinality();
        match best {
            Some((_, s)) if s >= score => {}
            _ => best = Some((i, score)),
        }
    }
    best.map(|(i, _)| i)
}
