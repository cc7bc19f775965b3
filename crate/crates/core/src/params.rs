//! Parameter trees.
//!
//! Every learnable structure is generic over its leaf type `P`. With
//! `P = Array2<F>` it holds values (or gradients, or optimizer moments); with
//! `P = Var` it holds the handles of those values bound onto an autograd tape.
//! Leaf order is fixed by [`Tree::leaves`] and is the order used by the
//! optimizer and the checkpoint payload.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::Scalar;

pub trait Tree<P> {
    type Mapped<Q>;

    fn map_named<Q, G: FnMut(&str, &P) -> Q>(&self, path: &str, f: &mut G) -> Self::Mapped<Q>;
    fn leaves(&self) -> Vec<&P>;
    fn leaves_mut(&mut self) -> Vec<&mut P>;

    fn map<Q, G: FnMut(&P) -> Q>(&self, mut f: G) -> Self::Mapped<Q> {
        self.map_named("", &mut |_, p| f(p))
    }

    fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.map_named("", &mut |name, _| out.push(name.to_string()));
        out
    }
}

pub(crate) fn join(path: &str, name: &str) -> String {
    if path.is_empty() {
        name.to_string()
    } else {
        format!("{path}.{name}")
    }
}

/// Implements [`Tree`] for a struct whose fields are either leaves (`P`) or subtrees.
macro_rules! param_tree {
    ($name:ident { leaves: [$($leaf:ident),*], trees: [$($tree:ident),*] }) => {
        impl<P> $crate::params::Tree<P> for $name<P> {
            type Mapped<Q> = $name<Q>;

            #[allow(unused_variables)]
            fn map_named<Q, G: FnMut(&str, &P) -> Q>(&self, path: &str, f: &mut G) -> $name<Q> {
                $(let $leaf = f(&$crate::params::join(path, stringify!($leaf)), &self.$leaf);)*
                $(let $tree = self.$tree.map_named(&$crate::params::join(path, stringify!($tree)), f);)*
                $name { $($leaf,)* $($tree,)* }
            }

            fn leaves(&self) -> Vec<&P> {
                #[allow(unused_mut)]
                let mut out: Vec<&P> = vec![$(&self.$leaf),*];
                $(out.extend(self.$tree.leaves());)*
                out
            }

            fn leaves_mut(&mut self) -> Vec<&mut P> {
                #[allow(unused_mut)]
                let mut out: Vec<&mut P> = vec![$(&mut self.$leaf),*];
                $(out.extend(self.$tree.leaves_mut());)*
                out
            }
        }
    };
}
pub(crate) use param_tree;

impl<P, T: Tree<P>> Tree<P> for Vec<T> {
    type Mapped<Q> = Vec<T::Mapped<Q>>;

    fn map_named<Q, G: FnMut(&str, &P) -> Q>(&self, path: &str, f: &mut G) -> Self::Mapped<Q> {
        self.iter()
            .enumerate()
            .map(|(i, t)| t.map_named(&join(path, &i.to_string()), f))
            .collect()
    }

    fn leaves(&self) -> Vec<&P> {
        self.iter().flat_map(|t| t.leaves()).collect()
    }

    fn leaves_mut(&mut self) -> Vec<&mut P> {
        self.iter_mut().flat_map(|t| t.leaves_mut()).collect()
    }
}

impl<P, T: Tree<P>> Tree<P> for Option<T> {
    type Mapped<Q> = Option<T::Mapped<Q>>;

    fn map_named<Q, G: FnMut(&str, &P) -> Q>(&self, path: &str, f: &mut G) -> Self::Mapped<Q> {
        self.as_ref().map(|t| t.map_named(path, f))
    }

    fn leaves(&self) -> Vec<&P> {
        self.as_ref().map(|t| t.leaves()).unwrap_or_default()
    }

    fn leaves_mut(&mut self) -> Vec<&mut P> {
        self.as_mut().map(|t| t.leaves_mut()).unwrap_or_default()
    }
}

/// Affine map `y = x·Wᵀ + b`; `weight` is `[out × in]`, `bias` is `[1 × out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<P> {
    pub weight: P,
    pub bias: P,
}
param_tree!(Linear { leaves: [weight, bias], trees: [] });

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<P> {
    pub gain: P,
    pub bias: P,
}
param_tree!(LayerNorm { leaves: [gain, bias], trees: [] });

pub const INIT_STD: f64 = 0.02;

/// Normal(0, std²) truncated to ±2 std by rejection.
pub fn trunc_normal<F: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Array2<F> {
    let normal = Normal::new(0.0, std).expect("std is positive");
    Array2::from_shape_simple_fn((rows, cols), || loop {
        let x: f64 = normal.sample(rng);
        if x.abs() <= 2.0 * std {
            break F::from_f64_lossy(x);
        }
    })
}

impl<F: Scalar> Linear<Array2<F>> {
    pub fn init<R: Rng + ?Sized>(out_dim: usize, in_dim: usize, std: f64, rng: &mut R) -> Self {
        Linear {
            weight: trunc_normal(out_dim, in_dim, std, rng),
            bias: Array2::zeros((1, out_dim)),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }
}

impl<F: Scalar> LayerNorm<Array2<F>> {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gain: Array2::ones((1, dim)),
            bias: Array2::zeros((1, dim)),
        }
    }
}

pub fn num_scalars<F, T: Tree<Array2<F>>>(tree: &T) -> usize {
    tree.leaves().iter().map(|a| a.len()).sum()
}

pub fn zeros_like<F: Scalar, T: Tree<Array2<F>>>(tree: &T) -> T::Mapped<Array2<F>> {
    tree.map(|a| Array2::zeros(a.raw_dim()))
}

pub fn cast<F: Scalar, G: Scalar, T: Tree<Array2<F>>>(tree: &T) -> T::Mapped<Array2<G>> {
    tree.map(|a| a.mapv(|x| G::from_f64_lossy(x.as_f64())))
}

/// Largest absolute entry over all leaves.
pub fn max_abs<F: Scalar, T: Tree<Array2<F>>>(tree: &T) -> F {
    tree.leaves()
        .iter()
        .flat_map(|a| a.iter())
        .fold(F::zero(), |m, x| m.max(x.abs()))
}

pub fn all_finite<F: Scalar, T: Tree<Array2<F>>>(tree: &T) -> bool {
    tree.leaves().iter().all(|a| a.iter().all(|x| x.is_finite()))
}
