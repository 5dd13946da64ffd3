use indexmap::IndexMap;
use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// A dense row-major parameter tensor of rank 1 or 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamTensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl ParamTensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 2 || shape.contains(&0) {
            return Err(invalid(format!("unsupported tensor shape {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != values.len() {
            return Err(invalid(format!(
                "shape {shape:?} holds {len} values, got {}",
                values.len()
            )));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            values: vec![0.0; len],
        }
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn uniform_fan_in<R: Rng + ?Sized>(shape: Vec<usize>, fan_in: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let len = shape.iter().product();
        let values = (0..len).map(|_| rng.random_range(-bound..=bound)).collect();
        Self { shape, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Rows and columns when viewed as a matrix; rank-1 tensors are row vectors.
    pub fn matrix_dims(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [c] => (1, *c),
            [r, c] => (*r, *c),
            _ => unreachable!("rank checked at construction"),
        }
    }

    pub fn to_array(&self) -> Array2<f64> {
        let (r, c) = self.matrix_dims();
        Array2::from_shape_vec((r, c), self.values.clone()).expect("consistent shape")
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Named parameter tensors in insertion order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamSet {
    tensors: IndexMap<String, ParamTensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert a tensor and return its position.
    pub fn insert(&mut self, name: impl Into<String>, tensor: ParamTensor) -> usize {
        self.tensors.insert_full(name.into(), tensor).0
    }

    pub fn get(&self, name: &str) -> Option<&ParamTensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamTensor> {
        self.tensors.get_mut(name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.tensors.get_index_of(name)
    }

    pub fn at(&self, idx: usize) -> &ParamTensor {
        &self.tensors[idx]
    }

    pub fn at_mut(&mut self, idx: usize) -> &mut ParamTensor {
        &mut self.tensors[idx]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamTensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamTensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.values().map(ParamTensor::len).sum()
    }

    /// A set with the same names and shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let tensors = self
            .tensors
            .iter()
            .map(|(k, v)| (k.clone(), ParamTensor::zeros(v.shape.clone())))
            .collect();
        Self { tensors }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(ParamTensor::is_finite)
    }

    /// Flat view over every scalar, in tensor order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors
            .values()
            .flat_map(|t| t.values.iter().copied())
            .collect()
    }

    /// Fails unless `other` has identical names and shapes in the same order.
    pub fn check_same_layout(&self, other: &ParamSet) -> Result<()> {
        if self.len() != other.len() {
            return Err(invalid(format!(
                "parameter sets differ in size: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        for ((na, ta), (nb, tb)) in self.tensors.iter().zip(other.tensors.iter()) {
            if na != nb || ta.shape != tb.shape {
                return Err(Error::ShapeMismatch {
                    name: na.clone(),
                    expected: ta.shape.clone(),
                    got: tb.shape.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Serialized checkpoint: a model description plus its named tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<S> {
    pub spec: S,
    pub tensors: ParamSet,
}

impl<S: Serialize + for<'de> Deserialize<'de>> Checkpoint<S> {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Self = serde_json::from_str(text)?;
        for (name, t) in ckpt.tensors.iter() {
            ParamTensor::new(t.shape.clone(), t.values.clone())
                .map_err(|e| invalid(format!("tensor `{name}`: {e}")))?;
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    #[test]
    fn rejects_inconsistent_shape() {
        assert!(ParamTensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(ParamTensor::new(vec![0], vec![]).is_err());
        assert!(ParamTensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn fan_in_init_is_bounded() {
        let mut rng = rng_from(3);
        let t = ParamTensor::uniform_fan_in(vec![16, 8], 16, &mut rng);
        assert!(t.values.iter().all(|v| v.abs() <= 0.25));
        assert!(t.values.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut rng = rng_from(11);
        let mut set = ParamSet::new();
        set.insert("w", ParamTensor::uniform_fan_in(vec![5, 7], 5, &mut rng));
        let mut b = ParamTensor::uniform_fan_in(vec![7], 5, &mut rng);
        b.values[0] = 0.1 + 0.2;
        b.values[1] = f64::MIN_POSITIVE;
        b.values[2] = -1.0e-300;
        set.insert("b", b);
        let ckpt = Checkpoint {
            spec: "mlp".to_string(),
            tensors: set.clone(),
        };
        let back: Checkpoint<String> = Checkpoint::from_json(&ckpt.to_json().unwrap()).unwrap();
        let bits = |s: &ParamSet| s.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.tensors), bits(&set));
        assert_eq!(back.tensors.names().collect::<Vec<_>>(), vec!["w", "b"]);
    }
}
