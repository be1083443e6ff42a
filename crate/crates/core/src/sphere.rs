//! Near-uniform orientation sets on the unit sphere.
//!
//! Sets are built by repeated 1-to-4 midpoint subdivision of the icosahedron
//! with radial projection back onto the sphere. Directions are sorted by
//! `(z, y, x)` so that a given order always produces the same file bytes.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

/// Highest subdivision order accepted by [`icosphere`].
pub const MAX_ICOSPHERE_ORDER: u32 = 6;

const UNIT_TOL: f64 = 1e-10;
const ANTIPODE_TOL: f64 = 1e-10;

#[inline]
pub fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn normalize(a: &Vec3) -> Vec3 {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

#[inline]
pub fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Great-circle distance between two unit vectors.
pub fn geodesic_distance(a: &Vec3, b: &Vec3) -> f64 {
    // atan2 form stays accurate for nearly parallel vectors
    norm(&cross(a, b)).atan2(dot(a, b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrientationSet {
    pub directions: Vec<Vec3>,
    /// Spherical area element per direction, in steradians.
    pub weights: Vec<f64>,
    /// Neighbors on the triangulated sphere. Empty when the set carries no mesh.
    #[serde(default)]
    pub adjacency: Vec<Vec<usize>>,
    #[serde(default)]
    pub antipode: Option<Vec<usize>>,
}

impl OrientationSet {
    /// Builds a set from arbitrary unit directions with uniform weights and
    /// no mesh. The antipode map is filled in when every direction has a
    /// partner.
    pub fn from_directions(directions: Vec<Vec3>) -> Result<Self> {
        let weights = quadrature_weights_uniform(directions.len())?;
        Self::with_weights(directions, weights)
    }

    pub fn with_weights(directions: Vec<Vec3>, weights: Vec<f64>) -> Result<Self> {
        if directions.len() != weights.len() {
            return Err(Error::Dimension(format!(
                "{} directions but {} weights",
                directions.len(),
                weights.len()
            )));
        }
        for (i, d) in directions.iter().enumerate() {
            if (norm(d) - 1.0).abs() > UNIT_TOL {
                return Err(Error::Domain(format!("direction {i} is not a unit vector")));
            }
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Parameter("weights must be positive".into()));
        }
        let mut set = Self {
            directions,
            weights,
            adjacency: Vec::new(),
            antipode: None,
        };
        set.antipode = antipodal_pairing(&set).ok();
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn has_adjacency(&self) -> bool {
        self.adjacency.len() == self.directions.len()
            && self.adjacency.iter().all(|a| !a.is_empty())
    }

    /// Checks the structural invariants; used after deserialization.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.weights.len() != n {
            return Err(Error::Structure(
                "weight count differs from direction count".into(),
            ));
        }
        for (i, d) in self.directions.iter().enumerate() {
            if (norm(d) - 1.0).abs() > UNIT_TOL {
                return Err(Error::Structure(format!(
                    "direction {i} is not a unit vector"
                )));
            }
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Structure("non-positive weight".into()));
        }
        if !self.adjacency.is_empty() {
            if self.adjacency.len() != n {
                return Err(Error::Structure(
                    "adjacency length differs from direction count".into(),
                ));
            }
            for (i, nbrs) in self.adjacency.iter().enumerate() {
                for &j in nbrs {
                    if j >= n || j == i || !self.adjacency[j].contains(&i) {
                        return Err(Error::Structure(format!(
                            "adjacency not symmetric at {i}-{j}"
                        )));
                    }
                }
            }
        }
        if let Some(a) = &self.antipode {
            if a.len() != n || a.iter().enumerate().any(|(i, &j)| j >= n || a[j] != i) {
                return Err(Error::Structure("antipode map is not an involution".into()));
            }
        }
        Ok(())
    }

    /// CSV listing with columns `index,x,y,z,weight`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,x,y,z,weight\n");
        for (i, (d, w)) in self.directions.iter().zip(&self.weights).enumerate() {
            let _ = writeln!(out, "{i},{},{},{},{w}", d[0], d[1], d[2]);
        }
        out
    }
}

/// Icosahedron subdivided `order` times, projected onto the unit sphere.
pub fn icosphere(order: u32) -> Result<OrientationSet> {
    if order > MAX_ICOSPHERE_ORDER {
        return Err(Error::ResourceLimit(format!(
            "icosphere order {order} exceeds {MAX_ICOSPHERE_ORDER}"
        )));
    }
    let (vertices, faces) = subdivided_icosahedron(order);

    // deterministic (z, y, x) ordering
    let mut perm: Vec<usize> = (0..vertices.len()).collect();
    perm.sort_by(|&a, &b| {
        let (va, vb) = (vertices[a], vertices[b]);
        va[2]
            .total_cmp(&vb[2])
            .then(va[1].total_cmp(&vb[1]))
            .then(va[0].total_cmp(&vb[0]))
    });
    let mut rank = vec![0usize; vertices.len()];
    for (new, &old) in perm.iter().enumerate() {
        rank[old] = new;
    }
    let directions: Vec<Vec3> = perm.iter().map(|&old| vertices[old]).collect();

    let mut adjacency = vec![Vec::new(); directions.len()];
    for f in &faces {
        for e in 0..3 {
            let (a, b) = (rank[f[e]], rank[f[(e + 1) % 3]]);
            if !adjacency[a].contains(&b) {
                adjacency[a].push(b);
                adjacency[b].push(a);
            }
        }
    }
    for nbrs in &mut adjacency {
        nbrs.sort_unstable();
    }

    let weights = quadrature_weights_uniform(directions.len())?;
    let mut set = OrientationSet {
        directions,
        weights,
        adjacency,
        antipode: None,
    };
    set.antipode = Some(antipodal_pairing(&set)?);
    Ok(set)
}

fn subdivided_icosahedron(order: u32) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ]
    .iter()
    .map(normalize)
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];

    for _ in 0..order {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vec3>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                let (va, vb) = (verts[a], verts[b]);
                verts.push(normalize(&[va[0] + vb[0], va[1] + vb[1], va[2] + vb[2]]));
                verts.len() - 1
            })
        };
        for &[a, b, c] in &faces {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            next.push([a, ab, ca]);
            next.push([b, bc, ab]);
            next.push([c, ca, bc]);
            next.push([ab, bc, ca]);
        }
        faces = next;
    }
    (vertices, faces)
}

/// Permutation `a` with `directions[a[i]] = -directions[i]`.
pub fn antipodal_pairing(set: &OrientationSet) -> Result<Vec<usize>> {
    let dirs = &set.directions;
    let mut by_z: Vec<usize> = (0..dirs.len()).collect();
    by_z.sort_by(|&a, &b| dirs[a][2].total_cmp(&dirs[b][2]));
    let zs: Vec<f64> = by_z.iter().map(|&i| dirs[i][2]).collect();

    let mut pairing = Vec::with_capacity(dirs.len());
    for (i, d) in dirs.iter().enumerate() {
        let target = -d[2];
        let start = zs.partition_point(|&z| z < target - ANTIPODE_TOL);
        let partner = by_z[start..]
            .iter()
            .take_while(|&&j| dirs[j][2] <= target + ANTIPODE_TOL)
            .copied()
            .find(|&j| {
                let e = &dirs[j];
                (e[0] + d[0]).abs() <= ANTIPODE_TOL
                    && (e[1] + d[1]).abs() <= ANTIPODE_TOL
                    && (e[2] + d[2]).abs() <= ANTIPODE_TOL
            });
        match partner {
            Some(j) => pairing.push(j),
            None => {
                return Err(Error::Structure(format!(
                    "direction {i} has no antipodal partner"
                )))
            }
        }
    }
    Ok(pairing)
}

/// Uniform area weights `4π/N` for a near-uniform sampling.
pub fn quadrature_weights_uniform(count: usize) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(Error::Parameter(
            "orientation count must be at least 1".into(),
        ));
    }
    Ok(vec![4.0 * PI / count as f64; count])
}

/// Polar angle of a unit vector, clamped against rounding.
pub fn polar_angle(d: &Vec3) -> f64 {
    d[2].clamp(-1.0, 1.0).acos()
}
