//! Synthetic lung-like phantoms with an analytic ground-truth warp.
//!
//! The scene is an analytic function of world position: an ellipsoidal
//! lung with band-limited parenchyma texture and a branching vessel tree.
//! The moving image samples the scene directly; the fixed image samples
//! the scene through the warp, so `M(y_true(x)) = F(x)` holds exactly and
//! both the truth field and the landmark pairs are analytic. The moving
//! parenchyma is shifted by +150 HU to mimic the density change between
//! breathing states.

use crate::image::{Image3D, VectorField3};
use crate::io::LandmarkList;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PhantomParams {
    /// Voxels per axis.
    pub size: usize,
    /// Isotropic spacing, mm.
    pub spacing: f64,
    /// Peak displacement magnitude of the warp, mm.
    pub amplitude_mm: f64,
    /// Landmark pairs to sample inside the lung.
    pub num_landmarks: usize,
    /// Intensity shift of the moving parenchyma, HU.
    pub hu_shift: f64,
    /// Additive acquisition noise, HU (independent per voxel and image).
    pub noise_hu: f64,
    /// Fraction of the amplitude carried by the boundary-invisible
    /// interior component of the warp.
    pub interior_fraction: f64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        Self {
            size: 64,
            spacing: 2.0,
            amplitude_mm: 10.0,
            num_landmarks: 200,
            hu_shift: 150.0,
            noise_hu: 0.0,
            interior_fraction: 0.35,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Phantom {
    pub fixed: Image3D,
    pub moving: Image3D,
    pub fixed_mask: Image3D,
    pub moving_mask: Image3D,
    /// Ground-truth displacement `y_true(x) - x` on the fixed grid, mm.
    pub truth: VectorField3,
    pub landmarks: LandmarkList,
    warp: Warp,
}

impl Phantom {
    /// Analytic ground-truth transform.
    pub fn warp_point(&self, p: [f64; 3]) -> [f64; 3] {
        self.warp.map(p)
    }

    /// Analytic Jacobian determinant of the ground-truth warp.
    pub fn warp_jacobian(&self, p: [f64; 3]) -> f64 {
        self.warp.det_jacobian(p)
    }
}

/// One separable sinusoidal displacement harmonic: component `j` is
/// `a_j * prod_k sin(w_jk x_k + phi_jk)`.
#[derive(Debug, Clone)]
struct Harmonic {
    amp: [f64; 3],
    freq: [[f64; 3]; 3],
    phase: [[f64; 3]; 3],
}

/// Radial smoothstep envelope over the lung ellipsoid: 1 deep inside,
/// fading to 0 before the boundary. Displacement modulated by it is
/// invisible to mask alignment.
#[derive(Debug, Clone)]
struct Envelope {
    center: [f64; 3],
    radii: [f64; 3],
    inner: f64,
    outer: f64,
}

impl Envelope {
    fn rho(&self, p: [f64; 3]) -> f64 {
        let mut acc = 0.0;
        for k in 0..3 {
            let d = (p[k] - self.center[k]) / self.radii[k];
            acc += d * d;
        }
        acc.sqrt()
    }

    fn value(&self, p: [f64; 3]) -> f64 {
        let r = self.rho(p);
        if r <= self.inner {
            1.0
        } else if r >= self.outer {
            0.0
        } else {
            let t = (self.outer - r) / (self.outer - self.inner);
            t * t * (3.0 - 2.0 * t)
        }
    }

    fn grad(&self, p: [f64; 3]) -> [f64; 3] {
        let r = self.rho(p);
        if r <= self.inner || r >= self.outer || r == 0.0 {
            return [0.0; 3];
        }
        let t = (self.outer - r) / (self.outer - self.inner);
        let ds_dr = 6.0 * t * (1.0 - t) * (-1.0 / (self.outer - self.inner));
        let mut g = [0.0; 3];
        for k in 0..3 {
            g[k] = ds_dr * (p[k] - self.center[k]) / (self.radii[k] * self.radii[k] * r);
        }
        g
    }
}

/// Smooth displacement with a closed-form Jacobian: a long-wavelength
/// harmonic peaking at the domain center (carrying the requested
/// amplitude) plus an envelope-modulated mid-frequency interior harmonic
/// whose motion cannot be inferred from the mask boundary.
#[derive(Debug, Clone)]
struct Warp {
    harmonics: Vec<Harmonic>,
    interior: Option<(Envelope, Harmonic)>,
}

impl Warp {
    fn harmonic_value(h: &Harmonic, p: [f64; 3]) -> [f64; 3] {
        let mut u = [0.0; 3];
        for j in 0..3 {
            let mut prod = h.amp[j];
            for k in 0..3 {
                prod *= (h.freq[j][k] * p[k] + h.phase[j][k]).sin();
            }
            u[j] = prod;
        }
        u
    }

    fn harmonic_grad(h: &Harmonic, p: [f64; 3]) -> [[f64; 3]; 3] {
        let mut g = [[0.0; 3]; 3];
        for j in 0..3 {
            let s: [f64; 3] = std::array::from_fn(|k| (h.freq[j][k] * p[k] + h.phase[j][k]).sin());
            let c: [f64; 3] = std::array::from_fn(|k| (h.freq[j][k] * p[k] + h.phase[j][k]).cos());
            for a in 0..3 {
                let mut prod = h.amp[j] * h.freq[j][a] * c[a];
                for k in 0..3 {
                    if k != a {
                        prod *= s[k];
                    }
                }
                g[j][a] = prod;
            }
        }
        g
    }

    fn displacement(&self, p: [f64; 3]) -> [f64; 3] {
        let mut u = [0.0; 3];
        for h in &self.harmonics {
            let v = Self::harmonic_value(h, p);
            for j in 0..3 {
                u[j] += v[j];
            }
        }
        if let Some((env, h)) = &self.interior {
            let e = env.value(p);
            if e > 0.0 {
                let v = Self::harmonic_value(h, p);
                for j in 0..3 {
                    u[j] += e * v[j];
                }
            }
        }
        u
    }

    fn map(&self, p: [f64; 3]) -> [f64; 3] {
        let u = self.displacement(p);
        [p[0] + u[0], p[1] + u[1], p[2] + u[2]]
    }

    /// Closed-form Jacobian matrix of the displacement.
    fn grad(&self, p: [f64; 3]) -> [[f64; 3]; 3] {
        let mut g = [[0.0; 3]; 3];
        for h in &self.harmonics {
            let hg = Self::harmonic_grad(h, p);
            for j in 0..3 {
                for a in 0..3 {
                    g[j][a] += hg[j][a];
                }
            }
        }
        if let Some((env, h)) = &self.interior {
            let e = env.value(p);
            let de = env.grad(p);
            if e > 0.0 || de != [0.0; 3] {
                let v = Self::harmonic_value(h, p);
                let hg = Self::harmonic_grad(h, p);
                for j in 0..3 {
                    for a in 0..3 {
                        g[j][a] += e * hg[j][a] + de[a] * v[j];
                    }
                }
            }
        }
        g
    }

    fn det_jacobian(&self, p: [f64; 3]) -> f64 {
        let g = self.grad(p);
        let m = [
            [1.0 + g[0][0], g[0][1], g[0][2]],
            [g[1][0], 1.0 + g[1][1], g[1][2]],
            [g[2][0], g[2][1], 1.0 + g[2][2]],
        ];
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    fn scale_amplitudes(&mut self, factor: f64) {
        for h in &mut self.harmonics {
            for a in &mut h.amp {
                *a *= factor;
            }
        }
        if let Some((_, h)) = &mut self.interior {
            for a in &mut h.amp {
                *a *= factor;
            }
        }
    }

    fn max_displacement(&self, extent: [f64; 3]) -> f64 {
        let mut probe = 77771u64;
        let mut max = 0.0f64;
        for _ in 0..3000 {
            let p = [
                unit(&mut probe) * extent[0],
                unit(&mut probe) * extent[1],
                unit(&mut probe) * extent[2],
            ];
            let u = self.displacement(p);
            for c in u {
                max = max.max(c.abs());
            }
        }
        // the primary peaks at the center by construction
        let c = [extent[0] * 0.5, extent[1] * 0.5, extent[2] * 0.5];
        for v in self.displacement(c) {
            max = max.max(v.abs());
        }
        max
    }
}

/// Deterministic 64-bit mixer; the basis of all phantom randomness, which
/// keeps volumes bit-identical per seed regardless of threading.
#[inline]
fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

#[inline]
fn unit(state: &mut u64) -> f64 {
    (splitmix(state) >> 11) as f64 / (1u64 << 53) as f64
}

/// Gaussian noise from the voxel index: parallel-safe and deterministic.
fn voxel_noise(seed: u64, index: u64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    let mut s = seed ^ index.wrapping_mul(0xd1342543de82ef95);
    let u1 = (unit(&mut s)).max(1e-12);
    let u2 = unit(&mut s);
    sigma * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

struct Tube {
    a: [f64; 3],
    b: [f64; 3],
    radius: f64,
    contrast: f64,
}

impl Tube {
    fn intensity(&self, p: [f64; 3]) -> f64 {
        // distance to the segment, smooth falloff over one radius
        let ab = [self.b[0] - self.a[0], self.b[1] - self.a[1], self.b[2] - self.a[2]];
        let ap = [p[0] - self.a[0], p[1] - self.a[1], p[2] - self.a[2]];
        let denom = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
        let t = if denom > 0.0 {
            ((ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / denom).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let d2: f64 = (0..3).map(|k| (ap[k] - t * ab[k]).powi(2)).sum();
        let d = d2.sqrt();
        if d >= self.radius * 2.0 {
            return 0.0;
        }
        // smoothstep from full contrast at the axis to zero at 2r
        let x = (1.0 - d / (self.radius * 2.0)).clamp(0.0, 1.0);
        self.contrast * x * x * (3.0 - 2.0 * x)
    }
}

struct Scene {
    center: [f64; 3],
    radii: [f64; 3],
    cosines: Vec<([f64; 3], f64, f64)>, // (wave vector, phase, amplitude)
    tubes: Vec<Tube>,
    hu_parenchyma: f64,
    hu_outside: f64,
}

impl Scene {
    fn inside(&self, p: [f64; 3], margin_mm: f64) -> bool {
        let mut acc = 0.0;
        for k in 0..3 {
            let r = (self.radii[k] - margin_mm).max(1.0);
            let d = (p[k] - self.center[k]) / r;
            acc += d * d;
        }
        acc <= 1.0
    }

    fn value(&self, p: [f64; 3]) -> f64 {
        if !self.inside(p, 0.0) {
            return self.hu_outside;
        }
        let mut v = self.hu_parenchyma;
        for (k, phase, amp) in &self.cosines {
            v += amp * (k[0] * p[0] + k[1] * p[1] + k[2] * p[2] + phase).cos();
        }
        for tube in &self.tubes {
            v += tube.intensity(p);
        }
        v
    }
}

fn build_scene(state: &mut u64, extent: [f64; 3]) -> Scene {
    let center = [extent[0] * 0.5, extent[1] * 0.5, extent[2] * 0.5];
    let radii = [extent[0] * 0.36, extent[1] * 0.40, extent[2] * 0.42];

    // narrowband parenchyma texture, wavelengths 7..11 mm: repetitive
    // enough that misaligned structures lock onto wrong lobes without
    // guidance, as fine vasculature does in real scans
    let mut cosines = Vec::new();
    for _ in 0..24 {
        let lambda = 7.0 + unit(state) * 4.0;
        let k_mag = std::f64::consts::TAU / lambda;
        let (t, z) = (unit(state) * std::f64::consts::TAU, unit(state) * 2.0 - 1.0);
        let r = (1.0 - z * z).max(0.0).sqrt();
        let dir = [r * t.cos(), r * t.sin(), z];
        let phase = unit(state) * std::f64::consts::TAU;
        let amp = 15.0 + unit(state) * 20.0;
        cosines.push(([dir[0] * k_mag, dir[1] * k_mag, dir[2] * k_mag], phase, amp));
    }

    // quasi-periodic vessel lattice: near-parallel tubes at ~16 mm pitch
    // with small jitter, the confusable fine structure that makes
    // unguided matching lock onto wrong neighbours
    let mut tubes = Vec::new();
    let pitch = 16.0;
    let mut gx = center[0] - radii[0];
    while gx <= center[0] + radii[0] {
        let mut gy = center[1] - radii[1];
        while gy <= center[1] + radii[1] {
            let jx = gx + (unit(state) - 0.5) * 4.0;
            let jy = gy + (unit(state) - 0.5) * 4.0;
            let tilt = [(unit(state) - 0.5) * 0.25, (unit(state) - 0.5) * 0.25];
            let half_len = radii[2] * 0.95;
            tubes.push(Tube {
                a: [jx - tilt[0] * half_len, jy - tilt[1] * half_len, center[2] - half_len],
                b: [jx + tilt[0] * half_len, jy + tilt[1] * half_len, center[2] + half_len],
                radius: 1.6 + unit(state) * 0.8,
                contrast: 420.0 + unit(state) * 120.0,
            });
            gy += pitch;
        }
        gx += pitch;
    }

    // plus a branching tree from a hilum point for distinctive anchors
    let hilum = [center[0] - radii[0] * 0.5, center[1], center[2]];
    let mut frontier = vec![(hilum, radii[0] * 0.06 + 2.5, 0usize)];
    while let Some((start, radius, depth)) = frontier.pop() {
        if depth >= 4 {
            continue;
        }
        let branches = if depth == 0 { 3 } else { 2 };
        for _ in 0..branches {
            let (t, z) = (unit(state) * std::f64::consts::TAU, unit(state) * 2.0 - 1.0);
            let r = (1.0 - z * z).max(0.0).sqrt();
            let len = radii[0] * (0.5 - 0.08 * depth as f64) * (0.7 + 0.5 * unit(state));
            let mut end = [
                start[0] + r * t.cos() * len,
                start[1] + r * t.sin() * len,
                start[2] + z * len,
            ];
            // pull the endpoint toward the interior
            for k in 0..3 {
                end[k] = end[k].clamp(center[k] - radii[k] * 0.9, center[k] + radii[k] * 0.9);
            }
            tubes.push(Tube {
                a: start,
                b: end,
                radius,
                contrast: 500.0 + unit(state) * 250.0,
            });
            frontier.push((end, (radius * 0.65).max(1.2), depth + 1));
        }
    }

    Scene {
        center,
        radii,
        cosines,
        tubes,
        hu_parenchyma: -850.0,
        hu_outside: 40.0,
    }
}

fn build_warp(
    state: &mut u64,
    extent: [f64; 3],
    amplitude: f64,
    center: [f64; 3],
    lung_radii: [f64; 3],
    interior_fraction: f64,
) -> Warp {
    if amplitude == 0.0 {
        return Warp {
            harmonics: vec![],
            interior: None,
        };
    }
    let sign = |s: &mut u64| if unit(s) < 0.5 { -1.0 } else { 1.0 };

    // primary: long wavelength, peak at the domain center
    let mut primary = Harmonic {
        amp: [0.0; 3],
        freq: [[0.0; 3]; 3],
        phase: [[0.0; 3]; 3],
    };
    let mut raw = [0.5 + 0.5 * unit(state), 0.5 + 0.5 * unit(state), 0.5 + 0.5 * unit(state)];
    let max = raw.iter().cloned().fold(0.0f64, f64::max);
    for r in raw.iter_mut() {
        *r *= amplitude / max;
    }
    for j in 0..3 {
        primary.amp[j] = raw[j] * sign(state);
        for k in 0..3 {
            let lambda = (1.4 + 0.8 * unit(state)) * extent[k];
            primary.freq[j][k] = std::f64::consts::TAU / lambda;
        }
    }

    // interior: mid frequency, random phases, faded out before the lung
    // boundary
    let mut interior = Harmonic {
        amp: [0.0; 3],
        freq: [[0.0; 3]; 3],
        phase: [[0.0; 3]; 3],
    };
    for j in 0..3 {
        interior.amp[j] = interior_fraction * raw[j] * sign(state);
        for k in 0..3 {
            let lambda = (0.5 + 0.2 * unit(state)) * extent[k];
            interior.freq[j][k] = std::f64::consts::TAU / lambda;
            interior.phase[j][k] = unit(state) * std::f64::consts::TAU;
        }
    }
    let envelope = Envelope {
        center,
        radii: lung_radii,
        inner: 0.45,
        outer: 0.85,
    };

    let mut warp = Warp {
        harmonics: vec![primary],
        interior: Some((envelope, interior)),
    };
    // pin the primary peak to the center, normalize the realized peak to
    // the requested amplitude, and lengthen wavelengths until the analytic
    // Jacobian stays within the physiological band
    for _ in 0..40 {
        for j in 0..3 {
            for k in 0..3 {
                let f = warp.harmonics[0].freq[j][k];
                warp.harmonics[0].phase[j][k] = std::f64::consts::FRAC_PI_2 - f * center[k];
            }
        }
        let realized = warp.max_displacement(extent);
        if realized > 0.0 {
            warp.scale_amplitudes(amplitude / realized);
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut probe = 424242u64;
        for _ in 0..2000 {
            let p = [
                unit(&mut probe) * extent[0],
                unit(&mut probe) * extent[1],
                unit(&mut probe) * extent[2],
            ];
            let d = warp.det_jacobian(p);
            lo = lo.min(d);
            hi = hi.max(d);
        }
        if lo > 0.45 && hi < 2.4 {
            break;
        }
        for h in &mut warp.harmonics {
            for j in 0..3 {
                for k in 0..3 {
                    h.freq[j][k] *= 0.85;
                }
            }
        }
        if let Some((_, h)) = &mut warp.interior {
            for j in 0..3 {
                for k in 0..3 {
                    h.freq[j][k] *= 0.85;
                }
            }
        }
    }
    warp
}

/// Generates the phantom pair. Same seed, same volumes, bit for bit.
pub fn make_phantom(seed: u64, params: &PhantomParams) -> Phantom {
    let mut state = seed.wrapping_mul(0x2545f4914f6cdd1d) ^ 0x9e3779b97f4a7c15;
    let n = params.size;
    let spacing = [params.spacing; 3];
    let extent = [n as f64 * params.spacing; 3];
    let dims = [n; 3];

    let scene = build_scene(&mut state, extent);
    let warp = build_warp(
        &mut state,
        extent,
        params.amplitude_mm,
        scene.center,
        scene.radii,
        params.interior_fraction,
    );

    let mut fixed = Image3D::zeros(dims, spacing, [0.0; 3]);
    let mut moving = Image3D::zeros(dims, spacing, [0.0; 3]);
    let mut fixed_mask = Image3D::zeros(dims, spacing, [0.0; 3]);
    let mut moving_mask = Image3D::zeros(dims, spacing, [0.0; 3]);
    let mut truth = VectorField3::zeros(dims, spacing, [0.0; 3]);

    use rayon::prelude::*;
    let plane = n * n;
    let noise_seed_f = splitmix(&mut state);
    let noise_seed_m = splitmix(&mut state);
    let rows: Vec<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<[f64; 3]>)> = (0..n)
        .into_par_iter()
        .map(|z| {
            let mut fv = Vec::with_capacity(plane);
            let mut mv = Vec::with_capacity(plane);
            let mut fm = Vec::with_capacity(plane);
            let mut mm = Vec::with_capacity(plane);
            let mut tf = Vec::with_capacity(plane);
            for y in 0..n {
                for x in 0..n {
                    let idx = (x + n * (y + n * z)) as u64;
                    let p = [
                        x as f64 * params.spacing,
                        y as f64 * params.spacing,
                        z as f64 * params.spacing,
                    ];
                    let yp = warp.map(p);
                    let u = [yp[0] - p[0], yp[1] - p[1], yp[2] - p[2]];
                    fv.push(scene.value(yp) + voxel_noise(noise_seed_f, idx, params.noise_hu));
                    mv.push(
                        scene.value(p)
                            + if scene.inside(p, 0.0) { params.hu_shift } else { 0.0 }
                            + voxel_noise(noise_seed_m, idx, params.noise_hu),
                    );
                    fm.push(if scene.inside(yp, 0.0) { 1.0 } else { 0.0 });
                    mm.push(if scene.inside(p, 0.0) { 1.0 } else { 0.0 });
                    tf.push(u);
                }
            }
            (fv, mv, fm, mm, tf)
        })
        .collect();
    for (z, (fv, mv, fm, mm, tf)) in rows.into_iter().enumerate() {
        let lo = z * plane;
        fixed.values[lo..lo + plane].copy_from_slice(&fv);
        moving.values[lo..lo + plane].copy_from_slice(&mv);
        fixed_mask.values[lo..lo + plane].copy_from_slice(&fm);
        moving_mask.values[lo..lo + plane].copy_from_slice(&mm);
        truth.vectors[lo..lo + plane].copy_from_slice(&tf);
    }

    // landmark pairs: fixed points sampled well inside the fixed lung
    let mut fixed_pts = Vec::with_capacity(params.num_landmarks);
    let mut moving_pts = Vec::with_capacity(params.num_landmarks);
    let mut attempts = 0;
    while fixed_pts.len() < params.num_landmarks && attempts < params.num_landmarks * 1000 {
        attempts += 1;
        let p = [
            unit(&mut state) * extent[0],
            unit(&mut state) * extent[1],
            unit(&mut state) * extent[2],
        ];
        let yp = warp.map(p);
        if scene.inside(yp, 6.0) {
            fixed_pts.push(p);
            moving_pts.push(yp);
        }
    }
    let landmarks = LandmarkList::new(fixed_pts, moving_pts).expect("generated pairs align");

    Phantom {
        fixed,
        moving,
        fixed_mask,
        moving_mask,
        truth,
        landmarks,
        warp,
    }
}
