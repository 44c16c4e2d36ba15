//! Exact trigonometric-polynomial arithmetic, independent of the FFT path.
//!
//! Fields are finite combinations `a0 + sum_m a_m cos(m w x) + b_m sin(m w x)`
//! with `w = 2 pi / L`; products use the product-to-sum identities, so every
//! operation is closed-form. This is the second route used to audit the
//! collocation-based operators.

#[derive(Debug, Clone)]
pub struct TrigPoly {
    pub length: f64,
    pub a0: f64,
    /// cos coefficients, index m-1 for harmonic m
    pub cos: Vec<f64>,
    /// sin coefficients, index m-1 for harmonic m
    pub sin: Vec<f64>,
}

impl TrigPoly {
    pub fn zero(length: f64) -> Self {
        Self {
            length,
            a0: 0.0,
            cos: Vec::new(),
            sin: Vec::new(),
        }
    }

    pub fn single_sin(length: f64, m: usize, amp: f64) -> Self {
        let mut p = Self::zero(length);
        p.ensure(m);
        p.sin[m - 1] = amp;
        p
    }

    fn ensure(&mut self, m: usize) {
        if self.cos.len() < m {
            self.cos.resize(m, 0.0);
            self.sin.resize(m, 0.0);
        }
    }

    pub fn degree(&self) -> usize {
        self.cos.len()
    }

    pub fn omega(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.length
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            length: self.length,
            a0: self.a0 * s,
            cos: self.cos.iter().map(|c| c * s).collect(),
            sin: self.sin.iter().map(|c| c * s).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.ensure(other.degree());
        out.a0 += other.a0;
        for m in 0..other.degree() {
            out.cos[m] += other.cos[m];
            out.sin[m] += other.sin[m];
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = Self::zero(self.length);
        out.ensure(self.degree() + other.degree());
        out.a0 = self.a0 * other.a0;
        // a0 cross terms
        for m in 1..=other.degree() {
            out.cos[m - 1] += self.a0 * other.cos[m - 1];
            out.sin[m - 1] += self.a0 * other.sin[m - 1];
        }
        for m in 1..=self.degree() {
            out.cos[m - 1] += other.a0 * self.cos[m - 1];
            out.sin[m - 1] += other.a0 * self.sin[m - 1];
        }
        for m in 1..=self.degree() {
            let (am, bm) = (self.cos[m - 1], self.sin[m - 1]);
            if am == 0.0 && bm == 0.0 {
                continue;
            }
            for n in 1..=other.degree() {
                let (an, bn) = (other.cos[n - 1], other.sin[n - 1]);
                if an == 0.0 && bn == 0.0 {
                    continue;
                }
                let sum = m + n;
                let diff = m as i64 - n as i64;
                // cos cos: half into |m-n| and m+n
                let cc = am * an * 0.5;
                out.cos[sum - 1] += cc;
                out.add_cos(diff, cc);
                // sin sin: half into |m-n| minus m+n
                let ss = bm * bn * 0.5;
                out.cos[sum - 1] -= ss;
                out.add_cos(diff, ss);
                // sin(m) cos(n): half sin(m+n) + half sin(m-n)
                let sc = bm * an * 0.5;
                out.sin[sum - 1] += sc;
                out.add_sin(diff, sc);
                // cos(m) sin(n): half sin(m+n) - half sin(m-n)
                let cs = am * bn * 0.5;
                out.sin[sum - 1] += cs;
                out.add_sin(-diff, cs);
            }
        }
        out
    }

    fn add_cos(&mut self, harmonic: i64, value: f64) {
        match harmonic.cmp(&0) {
            std::cmp::Ordering::Equal => self.a0 += value,
            std::cmp::Ordering::Greater => self.cos[harmonic as usize - 1] += value,
            std::cmp::Ordering::Less => self.cos[(-harmonic) as usize - 1] += value,
        }
    }

    fn add_sin(&mut self, harmonic: i64, value: f64) {
        match harmonic.cmp(&0) {
            std::cmp::Ordering::Equal => {}
            std::cmp::Ordering::Greater => self.sin[harmonic as usize - 1] += value,
            std::cmp::Ordering::Less => self.sin[(-harmonic) as usize - 1] -= value,
        }
    }

    pub fn dx(&self) -> Self {
        let w = self.omega();
        let mut out = Self::zero(self.length);
        out.ensure(self.degree());
        for m in 1..=self.degree() {
            let k = m as f64 * w;
            out.cos[m - 1] = k * self.sin[m - 1];
            out.sin[m - 1] = -k * self.cos[m - 1];
        }
        out
    }

    pub fn dx_n(&self, order: usize) -> Self {
        let mut out = self.clone();
        for _ in 0..order {
            out = out.dx();
        }
        out
    }

    /// Drop the constant term (mean-zero gauge).
    pub fn mean_zero(&self) -> Self {
        let mut out = self.clone();
        out.a0 = 0.0;
        out
    }

    pub fn eval(&self, x: f64) -> f64 {
        let w = self.omega();
        let mut total = self.a0;
        for m in 1..=self.degree() {
            let arg = m as f64 * w * x;
            total += self.cos[m - 1] * arg.cos() + self.sin[m - 1] * arg.sin();
        }
        total
    }

    pub fn sample(&self, nodes: &[f64]) -> Vec<f64> {
        nodes.iter().map(|&x| self.eval(x)).collect()
    }
}
