//! Finite affine-isometric group actions with uniform (Haar) weights.
//!
//! Every element is a map `T_g(x) = a x + c` with orthogonal linear part `a`.
//! Construction verifies the group axioms numerically: orthogonality of each
//! linear part, presence of the identity, and closure under composition and
//! inversion by table lookup. Averaging over a finite group with uniform
//! weights is exact, which keeps Monte-Carlo noise out of every certification
//! that builds on these actions.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::priors::GmmPrior;
use crate::{cvt, Error, Real, Result};

const INVARIANCE_SAMPLE_SEED: u64 = 0x1a7e_5eed;

/// One affine-isometric transform `x -> a x + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupElement<T: Real> {
    a: DMatrix<T>,
    c: DVector<T>,
}

impl<T: Real> GroupElement<T> {
    pub fn new(a: DMatrix<T>, c: DVector<T>) -> Self {
        GroupElement { a, c }
    }

    pub fn linear(&self) -> &DMatrix<T> {
        &self.a
    }

    pub fn offset(&self) -> &DVector<T> {
        &self.c
    }

    /// `T_g(x) = a x + c`.
    pub fn apply(&self, x: &DVector<T>) -> Result<DVector<T>> {
        check_dim(self.c.len(), x.len())?;
        Ok(&self.a * x + &self.c)
    }

    /// `T_g^{-1}(u) = a^T (u - c)`; the linear part is orthogonal so its
    /// transpose is its inverse.
    pub fn apply_inverse(&self, u: &DVector<T>) -> Result<DVector<T>> {
        check_dim(self.c.len(), u.len())?;
        Ok(self.a.tr_mul(&(u - &self.c)))
    }

    /// Applies only the transposed linear part, `a^T v`. This is how group
    /// elements act on *difference* vectors such as denoiser bias fields.
    pub fn pullback_vector(&self, v: &DVector<T>) -> Result<DVector<T>> {
        check_dim(self.c.len(), v.len())?;
        Ok(self.a.tr_mul(v))
    }

    fn compose(&self, other: &Self) -> Self {
        // (T_self ∘ T_other)(x) = a_s (a_o x + c_o) + c_s
        GroupElement {
            a: &self.a * &other.a,
            c: &self.a * &other.c + &self.c,
        }
    }

    fn inverse(&self) -> Self {
        GroupElement {
            a: self.a.transpose(),
            c: -(self.a.tr_mul(&self.c)),
        }
    }

    fn max_abs_distance(&self, other: &Self) -> T {
        let mut d = T::zero();
        for (x, y) in self.a.iter().zip(other.a.iter()) {
            d = d.max((*x - *y).abs());
        }
        for (x, y) in self.c.iter().zip(other.c.iter()) {
            d = d.max((*x - *y).abs());
        }
        d
    }

    fn bucket_key(&self) -> Vec<i64> {
        // Quantised at 1e-6; lookups verify the true distance afterwards and
        // fall back to a linear scan on bucket misses.
        self.a
            .iter()
            .chain(self.c.iter())
            .map(|x| (x.to_f64().unwrap_or(f64::NAN) * 1e6).round() as i64)
            .collect()
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// A finite group of affine-isometric transforms with uniform Haar weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupAction<T: Real> {
    dim: usize,
    elements: Vec<GroupElement<T>>,
    identity: usize,
}

impl<T: Real> GroupAction<T> {
    /// Builds a group action from explicit elements, verifying the axioms:
    /// orthogonal linear parts (within 1e-12), no duplicate elements, identity
    /// present, and closure under composition and inversion (within 1e-10).
    pub fn new(dim: usize, elements: Vec<GroupElement<T>>) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::NotAGroup {
                reason: "element set is empty".into(),
            });
        }
        let ortho_tol = crate::scaled_tol::<T>(1e-12);
        let table_tol = crate::scaled_tol::<T>(1e-10);
        let eye = DMatrix::<T>::identity(dim, dim);
        for (i, g) in elements.iter().enumerate() {
            if g.a.nrows() != dim || g.a.ncols() != dim || g.c.len() != dim {
                return Err(Error::NotAGroup {
                    reason: format!("element {i} does not act on dimension {dim}"),
                });
            }
            let gram = g.a.tr_mul(&g.a);
            let dev = (&gram - &eye).abs().max();
            if dev > ortho_tol {
                return Err(Error::NotAGroup {
                    reason: format!(
                        "linear part of element {i} is not orthogonal (|a^T a - I| = {:.3e})",
                        dev.to_f64().unwrap_or(f64::NAN)
                    ),
                });
            }
        }

        let mut buckets: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        for (i, g) in elements.iter().enumerate() {
            buckets.entry(g.bucket_key()).or_default().push(i);
        }
        let locate = |g: &GroupElement<T>| -> Option<usize> {
            if let Some(candidates) = buckets.get(&g.bucket_key()) {
                for &i in candidates {
                    if elements[i].max_abs_distance(g) <= table_tol {
                        return Some(i);
                    }
                }
            }
            elements
                .iter()
                .position(|e| e.max_abs_distance(g) <= table_tol)
        };

        for i in 0..elements.len() {
            for j in (i + 1)..elements.len() {
                if elements[i].max_abs_distance(&elements[j]) <= table_tol {
                    return Err(Error::NotAGroup {
                        reason: format!("elements {i} and {j} coincide"),
                    });
                }
            }
        }

        let identity = GroupElement {
            a: eye,
            c: DVector::zeros(dim),
        };
        let identity = locate(&identity).ok_or_else(|| Error::NotAGroup {
            reason: "identity element missing".into(),
        })?;

        for (i, g) in elements.iter().enumerate() {
            if locate(&g.inverse()).is_none() {
                return Err(Error::NotAGroup {
                    reason: format!("inverse of element {i} is not in the set"),
                });
            }
            for (j, h) in elements.iter().enumerate() {
                if locate(&g.compose(h)).is_none() {
                    return Err(Error::NotAGroup {
                        reason: format!("composition {i} ∘ {j} is not in the set"),
                    });
                }
            }
        }

        Ok(GroupAction {
            dim,
            elements,
            identity,
        })
    }

    /// The two-element group `{Id, -Id}`.
    pub fn sign_flip(dim: usize) -> Result<Self> {
        let eye = DMatrix::<T>::identity(dim, dim);
        let elements = vec![
            GroupElement::new(eye.clone(), DVector::zeros(dim)),
            GroupElement::new(-eye, DVector::zeros(dim)),
        ];
        Self::new(dim, elements)
    }

    /// All `n!` coordinate permutations. Construction checks the group table,
    /// which is quadratic in `n!`; limited to `n <= 7`.
    pub fn coordinate_permutations(dim: usize) -> Result<Self> {
        if dim > 7 {
            return Err(Error::invalid(
                "dim",
                "coordinate_permutations builds n! elements and verifies an (n!)^2 \
                 composition table; limited to n <= 7",
            ));
        }
        let mut elements = Vec::new();
        for perm in permutations(dim) {
            elements.push(permutation_element(&perm));
        }
        Self::new(dim, elements)
    }

    /// Cyclic shifts of the coordinates, `n` elements.
    pub fn cyclic_shift(dim: usize) -> Result<Self> {
        let mut elements = Vec::new();
        for k in 0..dim.max(1) {
            let perm: Vec<usize> = (0..dim).map(|i| (i + k) % dim).collect();
            elements.push(permutation_element(&perm));
        }
        Self::new(dim, elements)
    }

    /// The 8-element dihedral symmetry group of a square `side x side` image,
    /// acting on row-major flattened vectors as permutation matrices.
    pub fn dihedral_image(height: usize, width: usize) -> Result<Self> {
        if height != width {
            return Err(Error::invalid(
                "height/width",
                format!("dihedral symmetries need a square grid, got {height}x{width}"),
            ));
        }
        let side = height;
        let n = side * side;
        let idx = |r: usize, c: usize| r * side + c;
        // Pixel-coordinate maps for the generators.
        let rot = |r: usize, c: usize| (c, side - 1 - r);
        let flip = |r: usize, c: usize| (r, side - 1 - c);

        let mut elements: Vec<GroupElement<T>> = Vec::new();
        let mut push_unique = |perm: &[usize]| {
            let elem = permutation_element::<T>(perm);
            if !elements
                .iter()
                .any(|e| e.max_abs_distance(&elem) <= crate::scaled_tol::<T>(1e-10))
            {
                elements.push(elem);
            }
        };
        for rotations in 0..4 {
            for mirrored in [false, true] {
                let mut perm = vec![0usize; n];
                for r in 0..side {
                    for c in 0..side {
                        let (mut rr, mut cc) = (r, c);
                        if mirrored {
                            let (fr, fc) = flip(rr, cc);
                            rr = fr;
                            cc = fc;
                        }
                        for _ in 0..rotations {
                            let (nr, nc) = rot(rr, cc);
                            rr = nr;
                            cc = nc;
                        }
                        perm[idx(rr, cc)] = idx(r, c);
                    }
                }
                push_unique(&perm);
            }
        }
        Self::new(n, elements)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn elements(&self) -> &[GroupElement<T>] {
        &self.elements
    }

    pub fn identity_index(&self) -> usize {
        self.identity
    }

    /// Uniform Haar weight `1/|G|`.
    pub fn weight(&self) -> T {
        T::one() / cvt::<T>(self.elements.len() as f64)
    }

    pub fn to_doc(&self) -> GroupDoc<T> {
        GroupDoc::Custom {
            elements: self
                .elements
                .iter()
                .map(|g| ElementDoc {
                    a: (0..g.a.nrows())
                        .map(|r| g.a.row(r).iter().copied().collect())
                        .collect(),
                    c: g.c.iter().copied().collect(),
                })
                .collect(),
        }
    }

    pub fn from_doc(doc: &GroupDoc<T>) -> Result<Self> {
        match doc {
            GroupDoc::SignFlip { dim } => Self::sign_flip(*dim),
            GroupDoc::CoordinatePermutations { dim } => Self::coordinate_permutations(*dim),
            GroupDoc::CyclicShift { dim } => Self::cyclic_shift(*dim),
            GroupDoc::DihedralImage { h, w } => Self::dihedral_image(*h, *w),
            GroupDoc::Custom { elements } => {
                if elements.is_empty() {
                    return Err(Error::invalid("elements", "custom group has no elements"));
                }
                let dim = elements[0].c.len();
                let parsed = elements
                    .iter()
                    .map(|e| {
                        let rows = e.a.len();
                        let a = DMatrix::from_fn(rows, rows, |r, c| e.a[r][c]);
                        GroupElement::new(a, DVector::from_vec(e.c.clone()))
                    })
                    .collect();
                Self::new(dim, parsed)
            }
        }
    }
}

fn permutation_element<T: Real>(perm: &[usize]) -> GroupElement<T> {
    let n = perm.len();
    let mut a = DMatrix::<T>::zeros(n, n);
    for (src, &dst) in perm.iter().enumerate() {
        a[(dst, src)] = T::one();
    }
    GroupElement::new(a, DVector::zeros(n))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut items: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    heap_permute(&mut items, n, &mut out);
    out
}

fn heap_permute(items: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k <= 1 {
        out.push(items.clone());
        return;
    }
    for i in 0..k {
        heap_permute(items, k - 1, out);
        if k % 2 == 0 {
            items.swap(i, k - 1);
        } else {
            items.swap(0, k - 1);
        }
    }
}

/// Outcome of a pointwise density-invariance check.
#[derive(Debug, Clone, Serialize)]
pub struct InvarianceReport<T: Real> {
    pub max_violation: T,
    pub pass: bool,
    /// Index of the group element realising the maximum violation.
    pub worst_element: usize,
}

/// Checks `|log p(T_g x) - log p(x)|` over points sampled from the prior and
/// all group elements. A density invariant to each element passes for any
/// tolerance above rounding noise.
pub fn check_invariance<T: Real>(
    prior: &GmmPrior<T>,
    group: &GroupAction<T>,
    samples: usize,
    tol: T,
) -> Result<InvarianceReport<T>> {
    if samples == 0 {
        return Err(Error::invalid("samples", "need at least one sample"));
    }
    check_dim(prior.dim(), group.dim())?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(INVARIANCE_SAMPLE_SEED);
    let points = prior.sample_with_rng(&mut rng, samples)?;
    let mut max_violation = T::zero();
    let mut worst_element = group.identity_index();
    for x in &points {
        let base = prior.log_density(x)?;
        for (gi, g) in group.elements().iter().enumerate() {
            let moved = prior.log_density(&g.apply(x)?)?;
            let violation = (moved - base).abs();
            if violation > max_violation {
                max_violation = violation;
                worst_element = gi;
            }
        }
    }
    Ok(InvarianceReport {
        max_violation,
        pass: max_violation <= tol,
        worst_element,
    })
}

/// JSON form of a group: built-ins by name, custom groups as explicit
/// matrix/offset lists.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroupDoc<T> {
    SignFlip { dim: usize },
    CoordinatePermutations { dim: usize },
    CyclicShift { dim: usize },
    DihedralImage { h: usize, w: usize },
    Custom { elements: Vec<ElementDoc<T>> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ElementDoc<T> {
    pub a: Vec<Vec<T>>,
    pub c: Vec<T>,
}
