//! Interpolation on uniform grids.

/// Quintic Hermite interpolation from values and first two derivatives.
#[derive(Debug, Clone)]
pub struct Hermite5<'a> {
    pub h: f64,
    pub y: &'a [f64],
    pub dy: &'a [f64],
    pub ddy: &'a [f64],
}

impl Hermite5<'_> {
    pub fn eval(&self, z: f64) -> f64 {
        let n = self.y.len() - 1;
        let s = (z / self.h).clamp(0.0, n as f64);
        let i = (s.floor() as usize).min(n - 1);
        let t = s - i as f64;
        let h = self.h;
        let (y0, y1) = (self.y[i], self.y[i + 1]);
        let (d0, d1) = (self.dy[i] * h, self.dy[i + 1] * h);
        let (e0, e1) = (self.ddy[i] * h * h, self.ddy[i + 1] * h * h);
        let t2 = t * t;
        let t3 = t2 * t;
        let t4 = t3 * t;
        let t5 = t4 * t;
        let h00 = 1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5;
        let h01 = 10.0 * t3 - 15.0 * t4 + 6.0 * t5;
        let h10 = t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5;
        let h11 = -4.0 * t3 + 7.0 * t4 - 3.0 * t5;
        let h20 = 0.5 * (t2 - 3.0 * t3 + 3.0 * t4 - t5);
        let h21 = 0.5 * (t3 - 2.0 * t4 + t5);
        h00 * y0 + h01 * y1 + h10 * d0 + h11 * d1 + h20 * e0 + h21 * e1
    }
}

/// Four-point cubic Lagrange interpolation on nodes `i*h`, `i = 0..y.len()`.
pub fn cubic_uniform(y: &[f64], h: f64, z: f64) -> f64 {
    let n = y.len() - 1;
    let s = z / h;
    let i = (s.floor() as isize).clamp(1, n as isize - 2) as usize;
    let t = s - i as f64;
    let (a, b, c, d) = (y[i - 1], y[i], y[i + 1], y[i + 2]);
    let l0 = -t * (t - 1.0) * (t - 2.0) / 6.0;
    let l1 = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0;
    let l2 = -(t + 1.0) * t * (t - 2.0) / 2.0;
    let l3 = (t + 1.0) * t * (t - 1.0) / 6.0;
    l0 * a + l1 * b + l2 * c + l3 * d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_reproduces_quintic() {
        let f = |x: f64| 1.0 + x - 2.0 * x.powi(3) + 0.5 * x.powi(5);
        let df = |x: f64| 1.0 - 6.0 * x * x + 2.5 * x.powi(4);
        let ddf = |x: f64| -12.0 * x + 10.0 * x.powi(3);
        let h = 0.25;
        let xs: Vec<f64> = (0..=4).map(|i| i as f64 * h).collect();
        let y: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
        let dy: Vec<f64> = xs.iter().map(|&x| df(x)).collect();
        let ddy: Vec<f64> = xs.iter().map(|&x| ddf(x)).collect();
        let hm = Hermite5 {
            h,
            y: &y,
            dy: &dy,
            ddy: &ddy,
        };
        for k in 0..40 {
            let x = k as f64 / 40.0;
            assert!((hm.eval(x) - f(x)).abs() < 1e-13);
        }
    }

    #[test]
    fn cubic_reproduces_cubic() {
        let f = |x: f64| 2.0 - x + 3.0 * x * x * x;
        let h = 0.1;
        let y: Vec<f64> = (0..=10).map(|i| f(i as f64 * h)).collect();
        for k in 0..=50 {
            let x = k as f64 / 50.0;
            assert!((cubic_uniform(&y, h, x) - f(x)).abs() < 1e-13);
        }
    }
}
