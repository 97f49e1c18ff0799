//! Adaptive Gauss–Kronrod (7/15) quadrature for vector-valued integrands on
//! finite, semi-infinite and doubly infinite intervals.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
pub struct Quadrature {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for Quadrature {
    fn default() -> Self {
        Quadrature { abs_tol: 1e-10, rel_tol: 1e-12, max_intervals: 2000 }
    }
}

/// Location/scale hint used to map infinite ranges onto (-1, 1) or [0, 1).
#[derive(Debug, Clone, Copy)]
pub struct Hint {
    pub center: f64,
    pub scale: f64,
}

impl Default for Hint {
    fn default() -> Self {
        Hint { center: 0.0, scale: 1.0 }
    }
}

#[derive(Clone, Copy)]
enum Map {
    Finite,
    // y = a + s t / (1 - t), t in [0, 1)
    Upper { a: f64, s: f64 },
    // y = b - s (1 - t) / t, t in (0, 1]
    Lower { b: f64, s: f64 },
    // y = c + s t / (1 - t^2), t in (-1, 1)
    Both { c: f64, s: f64 },
}

impl Map {
    fn apply(&self, t: f64) -> (f64, f64) {
        match *self {
            Map::Finite => (t, 1.0),
            Map::Upper { a, s } => {
                let u = 1.0 - t;
                (a + s * t / u, s / (u * u))
            }
            Map::Lower { b, s } => (b - s * (1.0 - t) / t, s / (t * t)),
            Map::Both { c, s } => {
                let u = 1.0 - t * t;
                (c + s * t / u, s * (1.0 + t * t) / (u * u))
            }
        }
    }
}

struct Segment {
    a: f64,
    b: f64,
    value: Vec<f64>,
    error: f64,
}

impl Quadrature {
    /// Integrates the `dim`-vector valued `f` over (lo, hi); infinite bounds allowed.
    pub fn integrate<F>(&self, dim: usize, lo: f64, hi: f64, hint: Hint, mut f: F) -> Result<Vec<f64>>
    where
        F: FnMut(f64, &mut [f64]),
    {
        if lo.is_nan() || hi.is_nan() {
            return Err(Error::Domain("NaN integration bound".into()));
        }
        if lo >= hi {
            return Err(Error::Domain(format!("empty integration range ({lo}, {hi}]")));
        }
        let scale = if hint.scale > 0.0 && hint.scale.is_finite() { hint.scale } else { 1.0 };
        let (map, ta, tb) = match (lo.is_finite(), hi.is_finite()) {
            (true, true) => (Map::Finite, lo, hi),
            (true, false) => (Map::Upper { a: lo, s: scale }, 0.0, 1.0),
            (false, true) => (Map::Lower { b: hi, s: scale }, 0.0, 1.0),
            (false, false) => (Map::Both { c: hint.center, s: scale }, -1.0, 1.0),
        };
        let mut scratch = vec![0.0; dim];
        let mut g = |t: f64, out: &mut [f64]| {
            let (y, jac) = map.apply(t);
            if !y.is_finite() || !jac.is_finite() {
                out.iter_mut().for_each(|v| *v = 0.0);
                return;
            }
            f(y, out);
            for v in out.iter_mut() {
                *v = if *v == 0.0 { 0.0 } else { *v * jac };
            }
        };

        // Start from a few panels so that narrow peaks are not missed.
        let initial = if matches!(map, Map::Finite) { 4 } else { 8 };
        let mut segments: Vec<Segment> = (0..initial)
            .map(|k| {
                let a = ta + (tb - ta) * k as f64 / initial as f64;
                let b = ta + (tb - ta) * (k + 1) as f64 / initial as f64;
                let (value, error) = gk15(&mut g, a, b, dim, &mut scratch);
                Segment { a, b, value, error }
            })
            .collect();

        loop {
            let mut total = vec![0.0; dim];
            let mut err = 0.0;
            for s in &segments {
                for (t, v) in total.iter_mut().zip(&s.value) {
                    *t += v;
                }
                err += s.error;
            }
            let norm = total.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            let tol = self.abs_tol.max(self.rel_tol * norm);
            if err <= tol {
                return Ok(total);
            }
            if segments.len() >= self.max_intervals {
                if err <= 1e3 * tol {
                    return Ok(total);
                }
                return Err(Error::NonConvergence {
                    what: format!("adaptive quadrature (error estimate {err:.3e})"),
                    iterations: segments.len(),
                });
            }
            let (worst, _) = segments
                .iter()
                .enumerate()
                .fold((0, -1.0), |(bi, be), (i, s)| if s.error > be { (i, s.error) } else { (bi, be) });
            let seg = segments.swap_remove(worst);
            let mid = 0.5 * (seg.a + seg.b);
            let (v1, e1) = gk15(&mut g, seg.a, mid, dim, &mut scratch);
            let (v2, e2) = gk15(&mut g, mid, seg.b, dim, &mut scratch);
            segments.push(Segment { a: seg.a, b: mid, value: v1, error: e1 });
            segments.push(Segment { a: mid, b: seg.b, value: v2, error: e2 });
        }
    }

    pub fn integrate_scalar<F>(&self, lo: f64, hi: f64, hint: Hint, mut f: F) -> Result<f64>
    where
        F: FnMut(f64) -> f64,
    {
        self.integrate(1, lo, hi, hint, |y, out| out[0] = f(y)).map(|v| v[0])
    }
}

fn gk15<G>(g: &mut G, a: f64, b: f64, dim: usize, scratch: &mut [f64]) -> (Vec<f64>, f64)
where
    G: FnMut(f64, &mut [f64]),
{
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut kron = vec![0.0; dim];
    let mut gauss = vec![0.0; dim];
    for (j, (&x, &wk)) in XGK.iter().zip(WGK.iter()).enumerate() {
        let gauss_w = if j % 2 == 1 { Some(WG[j / 2]) } else { None };
        let nodes: &[f64] = if x == 0.0 { &[0.0] } else { &[-1.0, 1.0] };
        for &sign in nodes {
            g(c + sign * h * x, scratch);
            for k in 0..dim {
                let v = scratch[k];
                kron[k] += wk * v;
                if let Some(w) = gauss_w {
                    gauss[k] += w * v;
                }
            }
        }
    }
    let mut err = 0.0_f64;
    for k in 0..dim {
        kron[k] *= h;
        gauss[k] *= h;
        err = err.max((kron[k] - gauss[k]).abs());
    }
    (kron, err)
}
