//! Constrained parameterization of cs-reps.
//!
//! A cs-rep is pinned by a 4x4 meta matrix (anchor values at the start, the
//! spine-slope extremum, the radius extremum and the end) and two sequences
//! of per-step coefficients in [0, 1]. Each of the four monotone segments
//! (two for the spine slope, two for the radius) is a ramp
//! `w_k = 1 - prod_{j<=k} a~_j` from one anchor to the next. Every step of a
//! ramp is clamped to a window that keeps the step below the smoothness
//! threshold and keeps the end anchor reachable, so any coefficient values
//! decode to a valid airfoil.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::CsRep;
pub use crate::geometry::SmoothnessThresholds;
use crate::{Error, Result};

/// Fraction of the spine threshold a single decoded step may use.
pub const KAPPA_Y: f64 = 0.95;
/// Fraction of the radius threshold a single decoded step may use.
pub const KAPPA_R: f64 = 0.9;

/// Meta matrix rows.
pub const START: usize = 0;
pub const SPINE: usize = 1;
pub const RADIUS: usize = 2;
pub const END: usize = 3;
/// Meta matrix columns.
pub const X: usize = 0;
pub const Y: usize = 1;
pub const DY: usize = 2;
pub const R: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetaParams {
    pub m: [[f64; 4]; 4],
}

/// Sequence length and 1-based extremum positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub n: usize,
    pub pos_p: usize,
    pub pos_r: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoeffSeq {
    pub u_tilde: Vec<f64>,
    pub v_tilde: Vec<f64>,
}

/// Training target: meta matrix plus coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Targets {
    pub meta: MetaParams,
    #[serde(flatten)]
    pub coeffs: CoeffSeq,
}

impl CoeffSeq {
    pub fn len(&self) -> usize {
        self.u_tilde.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u_tilde.is_empty()
    }

    pub fn ones(n: usize) -> Self {
        Self {
            u_tilde: vec![1.0; n],
            v_tilde: vec![1.0; n],
        }
    }
}

fn grid_steps(from: f64, to: f64, delta_x: f64, what: &str) -> Result<usize> {
    let q = (to - from) / delta_x;
    let k = q.round();
    if (q - k).abs() * delta_x > 1e-9 || k < 0.0 {
        return Err(Error::domain(format!(
            "{what} = {to} is not on the grid x1 + k*{delta_x}"
        )));
    }
    Ok(k as usize)
}

const FOLD_MARGIN: f64 = 0.8;

/// Largest spine second difference that keeps the envelope free of folds
/// for radii up to `r_max`, capped by the smoothness threshold. A branch
/// folds once `r * curvature` exceeds `sqrt(1 - r'^2)`; a fraction of that
/// at the steepest allowed radius slope is kept.
pub fn effective_thres_y(th: &SmoothnessThresholds, delta_x: f64, r_max: f64) -> f64 {
    let margin = FOLD_MARGIN * (1.0 - KAPPA_R * KAPPA_R).sqrt();
    if r_max > 0.0 {
        th.thres_y.min(margin * delta_x * delta_x / r_max)
    } else {
        th.thres_y
    }
}

/// Largest per-step fraction of a segment span.
fn step_fraction(span: f64, thres: f64) -> f64 {
    if span.abs() > 0.0 {
        (thres / span.abs()).min(1.0)
    } else {
        1.0
    }
}

impl MetaParams {
    pub fn new(m: [[f64; 4]; 4]) -> Self {
        Self { m }
    }

    pub fn flat(&self) -> [f64; 16] {
        let mut out = [0.0; 16];
        for (i, row) in self.m.iter().enumerate() {
            out[4 * i..4 * i + 4].copy_from_slice(row);
        }
        out
    }

    pub fn from_flat(v: &[f64]) -> Result<Self> {
        if v.len() != 16 {
            return Err(Error::shape(format!("meta needs 16 values, got {}", v.len())));
        }
        let mut m = [[0.0; 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            row.copy_from_slice(&v[4 * i..4 * i + 4]);
        }
        Ok(Self { m })
    }

    /// Anchor values read off a cs-rep at 0-based extremum indices.
    pub fn from_rep(rep: &CsRep, p: usize, q: usize) -> Self {
        let n = rep.len();
        let dy = |i: usize| rep.spine_y[i.min(n - 2) + 1] - rep.spine_y[i.min(n - 2)];
        let row = |i: usize| [rep.x(i), rep.spine_y[i], dy(i), rep.radii[i]];
        let mut m = [row(0), row(p), row(q), row(n - 1)];
        m[END][DY] = dy(n - 2);
        Self { m }
    }

    fn r_max(&self) -> f64 {
        self.m[START][R].max(self.m[RADIUS][R]).max(self.m[END][R])
    }

    /// Full feasibility check; returns the derived counts.
    pub fn check(&self, delta_x: f64, th: &SmoothnessThresholds) -> Result<Counts> {
        let counts = derive_counts(self, delta_x)?;
        let Counts { n, pos_p, pos_r } = counts;
        if !(2..=n - 2).contains(&pos_p) {
            return Err(Error::domain(format!(
                "spine extremum position {pos_p} outside 2..={}",
                n - 2
            )));
        }
        if !(2..=n - 1).contains(&pos_r) {
            return Err(Error::domain(format!(
                "radius extremum position {pos_r} outside 2..={}",
                n - 1
            )));
        }
        if self.m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::domain("non-finite meta entry"));
        }
        let (r1, rp, rn) = (self.m[START][R], self.m[RADIUS][R], self.m[END][R]);
        if !(r1 > 0.0 && rp > 0.0 && rn > 0.0) {
            return Err(Error::domain("anchor radii must be positive"));
        }
        if rp < r1.max(rn) {
            return Err(Error::domain("radius extremum below an end radius"));
        }
        let ty = KAPPA_Y * effective_thres_y(th, delta_x, self.r_max());
        let tr = KAPPA_R * th.thres_r;
        let segs = [
            ("spine rise", self.m[SPINE][DY] - self.m[START][DY], pos_p - 1, ty),
            ("spine fall", self.m[END][DY] - self.m[SPINE][DY], n - 1 - pos_p, ty),
            ("radius rise", rp - r1, pos_r - 1, tr),
            ("radius fall", rn - rp, n - pos_r, tr),
        ];
        for (what, span, m, thres) in segs {
            if (m as f64) * step_fraction(span, thres) < 1.0 - 1e-12 {
                return Err(Error::domain(format!(
                    "{what} span {span:.3e} unreachable in {m} steps"
                )));
            }
        }
        Ok(counts)
    }

    /// Projects onto the feasible set: grid-snapped and ordered positions,
    /// admissible radii and reachable anchor spans.
    pub fn repair(&self, delta_x: f64, th: &SmoothnessThresholds) -> MetaParams {
        let mut m = self.m;
        let x1 = m[START][X];
        let steps = |x: f64| ((x - x1) / delta_x).round().max(0.0) as usize;
        let n = (steps(m[END][X]) + 1).max(CsRep::MIN_LEN);
        let pos_p = (steps(m[SPINE][X]) + 1).clamp(2, n - 2);
        let pos_r = (steps(m[RADIUS][X]) + 1).clamp(2, n - 1);
        m[END][X] = x1 + (n - 1) as f64 * delta_x;
        m[SPINE][X] = x1 + (pos_p - 1) as f64 * delta_x;
        m[RADIUS][X] = x1 + (pos_r - 1) as f64 * delta_x;

        let shrink = 1.0 - 1e-9;
        let rn = th.r_eps;
        let step_r = KAPPA_R * th.thres_r * shrink;
        let rp_cap = rn + step_r * (n - pos_r) as f64;
        let mut r1 = m[START][R].max(th.r_nose_min).min(rp_cap);
        let mut rp = m[RADIUS][R].max(r1).max(rn).min(rp_cap);
        rp = rp.min(r1 + step_r * (pos_r - 1) as f64);
        r1 = r1.min(rp);
        m[START][R] = r1;
        m[RADIUS][R] = rp;
        m[END][R] = rn;

        let ty = KAPPA_Y * effective_thres_y(th, delta_x, rp.max(r1)) * shrink;
        let dy1 = m[START][DY];
        let reach_a = ty * (pos_p - 1) as f64;
        let dyp = m[SPINE][DY].clamp(dy1 - reach_a, dy1 + reach_a);
        let reach_b = ty * (n - 1 - pos_p) as f64;
        let dyn_ = m[END][DY].clamp(dyp - reach_b, dyp + reach_b);
        m[SPINE][DY] = dyp;
        m[END][DY] = dyn_;
        MetaParams { m }
    }
}

/// Sequence length and extremum positions implied by the meta x entries.
pub fn derive_counts(meta: &MetaParams, delta_x: f64) -> Result<Counts> {
    if !(delta_x > 0.0 && delta_x.is_finite()) {
        return Err(Error::domain("spacing must be positive"));
    }
    let x1 = meta.m[START][X];
    let n = grid_steps(x1, meta.m[END][X], delta_x, "x_n")? + 1;
    if n < CsRep::MIN_LEN {
        return Err(Error::domain(format!(
            "sequence length {n} below minimum {}",
            CsRep::MIN_LEN
        )));
    }
    let pos_p = grid_steps(x1, meta.m[SPINE][X], delta_x, "x_pos_p")? + 1;
    let pos_r = grid_steps(x1, meta.m[RADIUS][X], delta_x, "x_pos_r")? + 1;
    if pos_p > n || pos_r > n {
        return Err(Error::domain("extremum position beyond the end anchor"));
    }
    Ok(Counts { n, pos_p, pos_r })
}

/// `a_i = 1 - prod_{j<=i} a~_j`.
pub fn cumprod_monotone(a_tilde: &[f64]) -> Result<Vec<f64>> {
    let mut p = 1.0;
    a_tilde
        .iter()
        .map(|&a| {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::domain(format!("coefficient {a} outside [0, 1]")));
            }
            p *= a;
            Ok(1.0 - p)
        })
        .collect()
}

/// Step-size policy of a ramp.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StepPolicy {
    /// Any step in `[0, c]`.
    Free,
    /// Non-increasing steps (concave rise).
    Decel,
    /// Non-decreasing steps (concave fall).
    Accel,
}

/// Linear bound `a1*P_{k-1} + a2*P_{k-2} + c0` on a step size.
#[derive(Debug, Clone, Copy)]
struct Bound {
    a1: f64,
    a2: f64,
    c0: f64,
}

impl Bound {
    const fn constant(c0: f64) -> Self {
        Self { a1: 0.0, a2: 0.0, c0 }
    }

    fn eval(&self, p1: f64, p2: f64) -> f64 {
        self.a1 * p1 + self.a2 * p2 + self.c0
    }
}

/// Local derivatives of `P_k` with respect to `P_{k-1}`, `P_{k-2}` and `a~_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct StepGrad(f64, f64, f64);

/// One monotone segment from `a` to `b` over `m` steps. The remaining
/// fraction is `P_k = prod_{j<=k} a~_j`; each step `s_k = P_{k-1} - P_k` is
/// clamped to the window allowed by the step policy and by reachability of
/// `b` at step `m`.
#[derive(Debug, Clone)]
struct Ramp {
    a: f64,
    b: f64,
    c: f64,
    m: usize,
    profile: StepPolicy,
    /// `P_{k-1}`, `P_{k-2}` (or the virtual previous step for `k = 1`).
    p1: f64,
    p2: Option<f64>,
    tape: Vec<StepGrad>,
}

impl Ramp {
    fn new(a: f64, b: f64, thres: f64, m: usize, profile: StepPolicy) -> Self {
        Self {
            a,
            b,
            c: step_fraction(b - a, thres),
            m,
            profile: if a == b { StepPolicy::Free } else { profile },
            p1: 1.0,
            p2: None,
            tape: Vec::with_capacity(m),
        }
    }

    /// Concave radius ramp: decelerating when rising, accelerating when falling.
    fn concave(a: f64, b: f64, thres: f64, m: usize) -> Self {
        let profile = if b > a { StepPolicy::Decel } else { StepPolicy::Accel };
        Self::new(a, b, thres, m, profile)
    }

    fn prev_step(&self) -> Bound {
        match self.p2 {
            Some(_) => Bound {
                a1: -1.0,
                a2: 1.0,
                c0: 0.0,
            },
            None => Bound::constant(match self.profile {
                StepPolicy::Decel => self.c,
                _ => 0.0,
            }),
        }
    }

    fn window(&self) -> (Vec<Bound>, Vec<Bound>) {
        let k_rem = (self.m - self.tape.len() - 1) as f64;
        let c = self.c;
        let all = Bound {
            a1: 1.0,
            a2: 0.0,
            c0: 0.0,
        };
        let rest_at_max = Bound {
            a1: 1.0,
            a2: 0.0,
            c0: -k_rem * c,
        };
        let even = Bound {
            a1: 1.0 / (k_rem + 1.0),
            a2: 0.0,
            c0: 0.0,
        };
        match self.profile {
            StepPolicy::Free => (vec![Bound::constant(0.0), rest_at_max], vec![Bound::constant(c), all]),
            StepPolicy::Decel => (vec![even], vec![self.prev_step(), all]),
            StepPolicy::Accel => (vec![self.prev_step(), rest_at_max], vec![Bound::constant(c), even]),
        }
    }

    fn step(&mut self, raw: f64) -> f64 {
        let p1 = self.p1;
        let p2 = self.p2.unwrap_or(0.0);
        let (lows, highs) = self.window();
        let pick = |bs: &[Bound], better: fn(f64, f64) -> bool| {
            let mut best = bs[0];
            for b in &bs[1..] {
                if better(b.eval(p1, p2), best.eval(p1, p2)) {
                    best = *b;
                }
            }
            best
        };
        let lo = pick(&lows, |x, y| x > y);
        let hi = pick(&highs, |x, y| x < y);
        let a = raw.clamp(0.0, 1.0);
        let s_raw = p1 * (1.0 - a);
        let bound = if s_raw <= lo.eval(p1, p2) {
            Some(lo)
        } else if s_raw >= hi.eval(p1, p2) {
            Some(hi)
        } else {
            None
        };
        let (p, g) = match bound {
            Some(bd) => {
                let p = (p1 - bd.eval(p1, p2)).max(0.0);
                (p, StepGrad(1.0 - bd.a1, -bd.a2, 0.0))
            }
            None => (p1 * a, StepGrad(a, 0.0, p1)),
        };
        self.tape.push(g);
        self.p2 = Some(p1);
        self.p1 = p;
        if p <= 0.0 {
            self.b
        } else {
            self.a + (1.0 - p) * (self.b - self.a)
        }
    }

    /// Coefficient moving the current state toward `value`.
    fn coeff_toward(&self, value: f64) -> f64 {
        let span = self.b - self.a;
        if span.abs() < 1e-12 || self.p1 <= 0.0 {
            return 1.0;
        }
        let target = (1.0 - (value - self.a) / span).clamp(0.0, 1.0);
        (target / self.p1).clamp(0.0, 1.0)
    }

    /// Gradients with respect to the raw coefficients, given gradients with
    /// respect to the emitted values.
    fn backward(&self, g_values: &[f64], g_raw: &mut [f64]) {
        let span = self.b - self.a;
        let m = self.tape.len();
        // t[k] accumulates dL/dP_k (0-based step k).
        let mut t = vec![0.0; m];
        for k in (0..m).rev() {
            let tk = t[k] - span * g_values[k];
            let StepGrad(d1, d2, da) = self.tape[k];
            g_raw[k] = tk * da;
            if k >= 1 {
                t[k - 1] += tk * d1;
            }
            if k >= 2 {
                t[k - 2] += tk * d2;
            }
        }
    }
}

/// Step-by-step decoder; also the tape for backpropagation.
#[derive(Debug, Clone)]
pub struct Decoder {
    counts: Counts,
    x0: f64,
    delta_x: f64,
    dy1: f64,
    y: Vec<f64>,
    r: Vec<f64>,
    dy: Vec<f64>,
    ramps: [Ramp; 4],
}

impl Decoder {
    pub fn new(meta: &MetaParams, delta_x: f64, th: &SmoothnessThresholds) -> Result<Self> {
        let counts = meta.check(delta_x, th)?;
        let Counts { n, pos_p, pos_r } = counts;
        let (p, q) = (pos_p - 1, pos_r - 1);
        let m = &meta.m;
        let ty = KAPPA_Y * effective_thres_y(th, delta_x, meta.r_max());
        let tr = KAPPA_R * th.thres_r;
        let ramps = [
            Ramp::new(m[START][DY], m[SPINE][DY], ty, p, StepPolicy::Free),
            Ramp::new(m[SPINE][DY], m[END][DY], ty, n - 2 - p, StepPolicy::Free),
            Ramp::concave(m[START][R], m[RADIUS][R], tr, q),
            Ramp::concave(m[RADIUS][R], m[END][R], tr, n - 1 - q),
        ];
        Ok(Self {
            counts,
            x0: m[START][X],
            delta_x,
            dy1: m[START][DY],
            y: vec![m[START][Y]],
            r: Vec::with_capacity(n),
            dy: Vec::with_capacity(n - 1),
            ramps,
        })
    }

    pub fn counts(&self) -> Counts {
        self.counts
    }

    /// Number of tokens emitted so far.
    pub fn position(&self) -> usize {
        self.r.len()
    }

    pub fn is_done(&self) -> bool {
        self.r.len() == self.counts.n
    }

    /// Consumes `(u~_i, v~_i)` and returns token `i` as `(y_i, r_i)`.
    /// Entries at anchors are ignored.
    pub fn push(&mut self, u: f64, v: f64) -> (f64, f64) {
        let i = self.r.len();
        let Counts { n, pos_p, pos_r } = self.counts;
        assert!(i < n, "decoder already produced {n} tokens");
        let (p, q) = (pos_p - 1, pos_r - 1);
        let r = match i {
            0 => self.ramps[2].a,
            _ if i <= q => self.ramps[2].step(v),
            _ => self.ramps[3].step(v),
        };
        self.r.push(r);
        if i + 1 < n {
            let dy = match i {
                0 => self.dy1,
                _ if i <= p => self.ramps[0].step(u),
                _ => self.ramps[1].step(u),
            };
            self.dy.push(dy);
            let y = self.y[i] + dy;
            self.y.push(y);
        }
        (self.y[i], r)
    }

    /// Coefficients for the next token chosen greedily from the current
    /// state so the emitted slope and radius approach the targets.
    pub fn coeffs_toward(&self, dy: f64, r: f64) -> (f64, f64) {
        let i = self.r.len();
        let Counts { n, pos_p, pos_r } = self.counts;
        let (p, q) = (pos_p - 1, pos_r - 1);
        let v = match i {
            0 => 1.0,
            _ if i <= q => self.ramps[2].coeff_toward(r),
            _ => self.ramps[3].coeff_toward(r),
        };
        let u = match i {
            0 => 1.0,
            _ if i + 1 >= n => 0.0,
            _ if i <= p => self.ramps[0].coeff_toward(dy),
            _ => self.ramps[1].coeff_toward(dy),
        };
        (u, v)
    }

    pub fn tokens(&self) -> (&[f64], &[f64]) {
        (&self.y[..self.r.len()], &self.r)
    }

    pub fn finish(&self) -> Result<CsRep> {
        if !self.is_done() {
            return Err(Error::shape(format!(
                "decoder stopped at {} of {} tokens",
                self.r.len(),
                self.counts.n
            )));
        }
        CsRep::new(self.x0, self.delta_x, self.y.clone(), self.r.clone())
    }

    /// Gradients of a loss with respect to `(u~, v~)` given its gradients
    /// with respect to the decoded `y` and `r`. Anchor entries and clamped
    /// steps receive zero.
    pub fn backward(&self, g_y: &[f64], g_r: &[f64]) -> CoeffSeq {
        let Counts { n, pos_p, pos_r } = self.counts;
        let (p, q) = (pos_p - 1, pos_r - 1);
        assert!(self.is_done() && g_y.len() == n && g_r.len() == n);
        // y_j = y_1 + sum_{i<j} dy_i
        let mut g_dy = vec![0.0; n - 1];
        let mut acc = 0.0;
        for i in (0..n - 1).rev() {
            acc += g_y[i + 1];
            g_dy[i] = acc;
        }
        let mut gu = vec![0.0; n];
        let mut gv = vec![0.0; n];
        self.ramps[0].backward(&g_dy[1..=p], &mut gu[1..=p]);
        self.ramps[1].backward(&g_dy[p + 1..n - 1], &mut gu[p + 1..n - 1]);
        self.ramps[2].backward(&g_r[1..=q], &mut gv[1..=q]);
        self.ramps[3].backward(&g_r[q + 1..n], &mut gv[q + 1..n]);
        CoeffSeq {
            u_tilde: gu,
            v_tilde: gv,
        }
    }
}

/// Decodes with the default thresholds for `delta_x`.
pub fn decode_coeffs(meta: &MetaParams, coeffs: &CoeffSeq, delta_x: f64) -> Result<CsRep> {
    decode_coeffs_with(meta, coeffs, delta_x, &SmoothnessThresholds::for_spacing(delta_x))
}

pub fn decode_coeffs_with(
    meta: &MetaParams,
    coeffs: &CoeffSeq,
    delta_x: f64,
    th: &SmoothnessThresholds,
) -> Result<CsRep> {
    decode_traced(meta, coeffs, delta_x, th)?.finish()
}

/// Full decode returning the tape for [`Decoder::backward`].
pub fn decode_traced(meta: &MetaParams, coeffs: &CoeffSeq, delta_x: f64, th: &SmoothnessThresholds) -> Result<Decoder> {
    let mut dec = Decoder::new(meta, delta_x, th)?;
    let n = dec.counts.n;
    if coeffs.u_tilde.len() != n || coeffs.v_tilde.len() != n {
        return Err(Error::shape(format!(
            "coefficients have lengths ({}, {}), expected {n}",
            coeffs.u_tilde.len(),
            coeffs.v_tilde.len()
        )));
    }
    for i in 0..n {
        dec.push(coeffs.u_tilde[i], coeffs.v_tilde[i]);
    }
    Ok(dec)
}

/// Inverse ramp: coefficients that reproduce `values` from `a` to `b`.
fn ramp_coeffs(values: &[f64], a: f64, b: f64, out: &mut [f64]) {
    let span = b - a;
    let mut u_prev = 0.0;
    let m = values.len();
    for (k, &v) in values.iter().enumerate() {
        let u = if span.abs() < 1e-12 { 0.0 } else { (v - a) / span };
        let den = 1.0 - u_prev;
        out[k] = if k + 1 == m {
            0.0
        } else if den < 1e-12 {
            1.0
        } else {
            ((1.0 - u) / den).clamp(0.0, 1.0)
        };
        u_prev = u;
    }
}

/// Index of the single extremum of `v` (interior only), or the midpoint when
/// `v` is monotone.
fn extremum(v: &[f64], lo: usize, hi: usize, tol: f64) -> usize {
    let d: Vec<f64> = v.windows(2).map(|w| w[1] - w[0]).collect();
    let first = d.iter().copied().find(|x| x.abs() > tol).unwrap_or(0.0);
    let pick = if first > 0.0 {
        argext(v, |a, b| a > b)
    } else {
        argext(v, |a, b| a < b)
    };
    if (lo..=hi).contains(&pick) {
        pick
    } else {
        ((lo + hi) / 2).clamp(lo, hi)
    }
}

fn argext(v: &[f64], better: impl Fn(f64, f64) -> bool) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if better(v[i], v[best]) {
            best = i;
        }
    }
    best
}

fn pos_from_shape(rep: &CsRep) -> (usize, usize) {
    let n = rep.len();
    let dy: Vec<f64> = rep.spine_y.windows(2).map(|w| w[1] - w[0]).collect();
    let th = SmoothnessThresholds::for_spacing(rep.delta_x);
    let p = extremum(&dy, 1, n - 3, 1e-9 * th.thres_y);
    let q = extremum(&rep.radii, 1, n - 2, 1e-9 * th.thres_r);
    (p, q)
}

fn coeffs_for(rep: &CsRep, meta: &MetaParams, p: usize, q: usize) -> CoeffSeq {
    let n = rep.len();
    let dy: Vec<f64> = rep.spine_y.windows(2).map(|w| w[1] - w[0]).collect();
    let m = &meta.m;
    let mut c = CoeffSeq::ones(n);
    ramp_coeffs(&dy[1..=p], m[START][DY], m[SPINE][DY], &mut c.u_tilde[1..=p]);
    ramp_coeffs(&dy[p + 1..], m[SPINE][DY], m[END][DY], &mut c.u_tilde[p + 1..n - 1]);
    ramp_coeffs(&rep.radii[1..=q], m[START][R], m[RADIUS][R], &mut c.v_tilde[1..=q]);
    ramp_coeffs(&rep.radii[q + 1..], m[RADIUS][R], m[END][R], &mut c.v_tilde[q + 1..]);
    c
}

/// Exact inverse of [`decode_coeffs`] on sequences with unimodal spine slope
/// and radius.
pub fn encode_coeffs(rep: &CsRep) -> Result<(MetaParams, CoeffSeq)> {
    rep.check_shape()?;
    let th = SmoothnessThresholds::for_spacing(rep.delta_x);
    let dy: Vec<f64> = rep.spine_y.windows(2).map(|w| w[1] - w[0]).collect();
    let d2y: Vec<f64> = dy.windows(2).map(|w| w[1] - w[0]).collect();
    let dr: Vec<f64> = rep.radii.windows(2).map(|w| w[1] - w[0]).collect();
    if sign_changes(&d2y, 1e-9 * th.thres_y) > 1 || sign_changes(&dr, 1e-9 * th.thres_r) > 1 {
        return Err(Error::domain("spine slope or radius is not unimodal"));
    }
    let (p, q) = pos_from_shape(rep);
    let meta = MetaParams::from_rep(rep, p, q);
    let coeffs = coeffs_for(rep, &meta, p, q);
    Ok((meta, coeffs))
}

/// Nearest decodable parameters for a noisy cs-rep (e.g. one extracted from
/// a sampled profile): anchors are repaired to be feasible and each segment
/// is projected onto a monotone ramp.
pub fn encode_regularized(rep: &CsRep, th: &SmoothnessThresholds) -> Result<(MetaParams, CoeffSeq)> {
    rep.check_shape()?;
    let n = rep.len();
    let dy: Vec<f64> = rep.spine_y.windows(2).map(|w| w[1] - w[0]).collect();
    // Spine split minimizing the height error of the projected slope.
    let p = (1..=n - 3)
        .min_by(|&i, &j| split_cost(&dy, i).total_cmp(&split_cost(&dy, j)).then(i.cmp(&j)))
        .unwrap_or(1);
    let q = (1..=n - 2)
        .max_by(|&i, &j| rep.radii[i].total_cmp(&rep.radii[j]).then(j.cmp(&i)))
        .unwrap_or(1);
    let mut meta = MetaParams::from_rep(rep, p, q);
    meta.m[START][DY] = outer_anchor(&dy[..=p], dy[p], dy[0]);
    meta.m[END][DY] = outer_anchor(&dy[p..], dy[p], dy[n - 2]);
    let meta = meta.repair(rep.delta_x, th);
    meta.check(rep.delta_x, th)?;
    let mut dec = Decoder::new(&meta, rep.delta_x, th)?;
    let mut coeffs = CoeffSeq::ones(n);
    for i in 0..n {
        let (u, v) = dec.coeffs_toward(dy.get(i).copied().unwrap_or(0.0), rep.radii[i]);
        coeffs.u_tilde[i] = u;
        coeffs.v_tilde[i] = v;
        dec.push(u, v);
    }
    let coeffs = refine_coeffs(rep, &meta, coeffs, th, REFINE_ITERS)?;
    Ok((meta, coeffs))
}

const REFINE_ITERS: usize = 300;

/// Projected Adam on the coefficients against the target heights and radii.
fn refine_coeffs(
    rep: &CsRep,
    meta: &MetaParams,
    mut c: CoeffSeq,
    th: &SmoothnessThresholds,
    iters: usize,
) -> Result<CoeffSeq> {
    let n = rep.len();
    let (lr, b1, b2) = (0.02, 0.9, 0.999);
    let mut m = vec![0.0; 2 * n];
    let mut v = vec![0.0; 2 * n];
    let loss_of = |dec: &Decoder| {
        let (y, r) = dec.tokens();
        let gy: Vec<f64> = y.iter().zip(&rep.spine_y).map(|(a, b)| a - b).collect();
        let gr: Vec<f64> = r.iter().zip(&rep.radii).map(|(a, b)| a - b).collect();
        let l = gy.iter().chain(&gr).map(|d| d * d).sum::<f64>();
        (l, gy, gr)
    };
    let mut best = c.clone();
    let mut best_loss = f64::INFINITY;
    for t in 1..=iters {
        let dec = decode_traced(meta, &c, rep.delta_x, th)?;
        let (l, gy, gr) = loss_of(&dec);
        if l < best_loss {
            best_loss = l;
            best = c.clone();
        }
        let g = dec.backward(&gy, &gr);
        let grads = g.u_tilde.iter().chain(&g.v_tilde);
        let params = c.u_tilde.iter_mut().chain(c.v_tilde.iter_mut());
        for (k, (w, gk)) in params.zip(grads).enumerate() {
            m[k] = b1 * m[k] + (1.0 - b1) * gk;
            v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
            let mh = m[k] / (1.0 - b1.powi(t as i32));
            let vh = v[k] / (1.0 - b2.powi(t as i32));
            *w = (*w - lr * mh / (vh.sqrt() + 1e-12)).clamp(0.0, 1.0);
        }
    }
    Ok(best)
}

/// Outer anchor of a segment: its extreme on the side of `raw`, so an
/// outlier end difference does not flatten the whole ramp.
fn outer_anchor(seg: &[f64], inner: f64, raw: f64) -> f64 {
    let (lo, hi) = seg
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if raw >= inner {
        hi
    } else {
        lo
    }
}

/// Monotone projection of `seg` onto a ramp from `a` to `b`.
fn project_ramp(seg: &[f64], a: f64, b: f64, out: &mut Vec<f64>) {
    let span = b - a;
    let mut u_prev: f64 = 0.0;
    for &v in seg {
        let u = if span.abs() < 1e-12 {
            0.0
        } else {
            ((v - a) / span).clamp(u_prev, 1.0)
        };
        out.push(a + u * span);
        u_prev = u;
    }
}

/// Squared accumulated error of the slope projection split at `p`.
fn split_cost(dy: &[f64], p: usize) -> f64 {
    let n1 = dy.len();
    let a = outer_anchor(&dy[..=p], dy[p], dy[0]);
    let b = outer_anchor(&dy[p..], dy[p], dy[n1 - 1]);
    let mut proj = Vec::with_capacity(n1);
    project_ramp(&dy[..=p], a, dy[p], &mut proj);
    project_ramp(&dy[p + 1..], dy[p], b, &mut proj);
    let mut drift = 0.0;
    let mut cost = 0.0;
    for (x, y) in proj.iter().zip(dy) {
        drift += x - y;
        cost += drift * drift;
    }
    cost
}

fn sign_changes(v: &[f64], tol: f64) -> usize {
    let mut last = 0.0f64;
    let mut count = 0;
    for &x in v {
        if x.abs() <= tol {
            continue;
        }
        if last != 0.0 && x.signum() != last {
            count += 1;
        }
        last = x.signum();
    }
    count
}

/// Floors in-segment coefficients at `a_tilde_min`, zeroes the segment end
/// entries and sets unused anchor entries to 1.
pub fn clamp_feasible(coeffs: &CoeffSeq, counts: Counts, th: &SmoothnessThresholds) -> CoeffSeq {
    let Counts { n, pos_p, pos_r } = counts;
    let (p, q) = (pos_p - 1, pos_r - 1);
    let floor = |v: f64| v.clamp(th.a_tilde_min, 1.0);
    let mut out = coeffs.clone();
    for i in 0..n {
        out.u_tilde[i] = match i {
            0 => 1.0,
            _ if i == p || i == n - 2 => 0.0,
            _ if i == n - 1 => 1.0,
            _ => floor(coeffs.u_tilde[i]),
        };
        out.v_tilde[i] = match i {
            0 => 1.0,
            _ if i == q || i == n - 1 => 0.0,
            _ => floor(coeffs.v_tilde[i]),
        };
    }
    out
}

/// Bounds for random meta sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetaBox {
    pub n_min: usize,
    pub n_max: usize,
    /// Largest absolute spine slope at the anchors.
    pub slope_max: f64,
    pub y1_max: f64,
    pub r_max: f64,
}

impl Default for MetaBox {
    fn default() -> Self {
        Self {
            n_min: 64,
            n_max: 128,
            slope_max: 0.4,
            y1_max: 0.05,
            r_max: 0.12,
        }
    }
}

/// Uniform draw from the feasible meta set inside `bounds`.
pub fn sample_meta<R: Rng + ?Sized>(
    rng: &mut R,
    delta_x: f64,
    th: &SmoothnessThresholds,
    bounds: &MetaBox,
) -> MetaParams {
    let n = rng.gen_range(bounds.n_min.max(CsRep::MIN_LEN)..=bounds.n_max.max(CsRep::MIN_LEN));
    let pos_p = rng.gen_range(2..=n - 2);
    let pos_r = rng.gen_range(2..=n - 1);
    let shrink = 1.0 - 1e-9;
    let step_r = KAPPA_R * th.thres_r * shrink;
    let rn = th.r_eps;
    let cap = (rn + step_r * (n - pos_r) as f64).min(bounds.r_max);
    let r1 = rng.gen_range(th.r_nose_min..=cap.max(th.r_nose_min));
    let rp_hi = cap.min(r1 + step_r * (pos_r - 1) as f64).max(r1);
    let rp = rng.gen_range(r1..=rp_hi);
    let ty = KAPPA_Y * effective_thres_y(th, delta_x, rp) * shrink;
    let s = bounds.slope_max * delta_x;
    let dy1 = rng.gen_range(-s..=s);
    let reach_a = ty * (pos_p - 1) as f64;
    let dyp = rng.gen_range((dy1 - reach_a).max(-s).min(dy1)..=(dy1 + reach_a).min(s).max(dy1));
    let reach_b = ty * (n - 1 - pos_p) as f64;
    let dyn_ = rng.gen_range((dyp - reach_b).max(-s).min(dyp)..=(dyp + reach_b).min(s).max(dyp));
    let y1 = rng.gen_range(-bounds.y1_max..=bounds.y1_max);
    let x = |k: usize| (k - 1) as f64 * delta_x;
    MetaParams {
        m: [
            [0.0, y1, dy1, r1],
            [x(pos_p), 0.0, dyp, 0.0],
            [x(pos_r), 0.0, 0.0, rp],
            [x(n), 0.0, dyn_, rn],
        ],
    }
}

/// Independent uniform coefficients.
pub fn sample_coeffs<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CoeffSeq {
    CoeffSeq {
        u_tilde: (0..n).map(|_| rng.gen::<f64>()).collect(),
        v_tilde: (0..n).map(|_| rng.gen::<f64>()).collect(),
    }
}
