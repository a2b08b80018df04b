//! Accessors shared by the Cholesky box kernels.

use std::any::Any;
use std::sync::Arc;

use crate::cholesky::Tile;
use crate::error::BoxError;
use crate::record::{BoxSignature, Payload, Record, TypePattern};

pub(crate) fn take<T: Any + Send + Sync>(r: &mut Record, name: &str) -> Result<Arc<T>, BoxError> {
    r.take_field::<T>(name)
        .ok_or_else(|| BoxError::new(format!("field {name} missing or of the wrong type")))
}

pub(crate) fn tag(r: &Record, name: &str) -> Result<i64, BoxError> {
    r.tag(name).ok_or_else(|| BoxError::new(format!("tag <{name}> missing")))
}

/// A tag used as a tile index or count.
pub(crate) fn index(r: &Record, name: &str) -> Result<usize, BoxError> {
    let v = tag(r, name)?;
    usize::try_from(v).map_err(|_| BoxError::new(format!("tag <{name}> = {v} is negative")))
}

pub(crate) fn tile(t: Arc<Tile>) -> Payload {
    t
}

pub(crate) fn sig(text: &str) -> BoxSignature {
    BoxSignature::parse(text).expect("well-formed signature literal")
}

pub(crate) fn pat(text: &str) -> TypePattern {
    TypePattern::parse(text).expect("well-formed pattern literal")
}
