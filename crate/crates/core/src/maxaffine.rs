//! Max-of-affine functions and their exact correspondence with ICNNs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::icnn::{IcnnLayer, IcnnModel};
use crate::numeric::{dot, least_squares, Matrix, RngStream};

/// `f(x) = max_i (a_i · x + b_i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaxAffine {
    d: usize,
    pieces: Vec<(Vec<f64>, f64)>,
}

impl MaxAffine {
    pub fn new(pieces: Vec<(Vec<f64>, f64)>) -> Result<Self> {
        let first = pieces.first().ok_or(Error::Empty("max-affine pieces"))?;
        let d = first.0.len();
        for (a, b) in &pieces {
            check_dim("max-affine slope", d, a.len())?;
            if !b.is_finite() || a.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("max-affine coefficient"));
            }
        }
        Ok(Self { d, pieces })
    }

    /// Pieces with slopes and offsets drawn from `N(0, 1)`.
    pub fn random(k: usize, d: usize, rng: &mut RngStream) -> Result<Self> {
        let pieces = (0..k)
            .map(|_| ((0..d).map(|_| rng.gaussian(0.0, 1.0)).collect(), rng.gaussian(0.0, 1.0)))
            .collect();
        Self::new(pieces)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn pieces(&self) -> &[(Vec<f64>, f64)] {
        &self.pieces
    }

    pub fn piece_value(&self, i: usize, x: &[f64]) -> f64 {
        let (a, b) = &self.pieces[i];
        dot(a, x) + b
    }

    /// Maximum value and the lowest index attaining it.
    pub fn eval_argmax(&self, x: &[f64]) -> Result<(f64, usize)> {
        check_dim("max-affine input", self.d, x.len())?;
        let mut best = (f64::NEG_INFINITY, 0);
        for i in 0..self.pieces.len() {
            let v = self.piece_value(i, x);
            if v > best.0 {
                best = (v, i);
            }
        }
        Ok(best)
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        Ok(self.eval_argmax(x)?.0)
    }

    pub fn to_doc(&self) -> MaxAffineDoc {
        MaxAffineDoc {
            kind: "maxaffine".into(),
            d: self.d,
            pieces: self.pieces.clone(),
        }
    }

    pub fn from_doc(doc: MaxAffineDoc) -> Result<Self> {
        if doc.kind != "maxaffine" {
            return Err(invalid(format!("expected model type \"maxaffine\", found {:?}", doc.kind)));
        }
        let m = Self::new(doc.pieces)?;
        check_dim("max-affine d", doc.d, m.d)?;
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        crate::json::to_string(&self.to_doc())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_doc(crate::json::from_str(s)?)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MaxAffineDoc {
    #[serde(rename = "type")]
    pub kind: String,
    pub d: usize,
    pub pieces: Vec<(Vec<f64>, f64)>,
}

/// Row `[max(c, 0); max(-c, 0)]` so that `row · [x; -x] = c · x` with nonnegative weights.
fn split_signed(c: &[f64]) -> Vec<f64> {
    let mut row: Vec<f64> = c.iter().map(|&v| v.max(0.0)).collect();
    row.extend(c.iter().map(|&v| (-v).max(0.0)));
    row
}

fn row_matrix(row: Vec<f64>) -> Matrix {
    let n = row.len();
    Matrix::from_row_major(1, n, row).expect("row length matches")
}

/// Nested-maximum network computing `m` exactly:
///
/// ```text
/// z_1 = relu((a_1 - a_2)·x + b_1 - b_2)
/// z_i = relu(z_{i-1} + (a_i - a_{i+1})·x + b_i - b_{i+1})
/// f   = z_{K-1} + a_K·x + b_K
/// ```
///
/// `K - 1` hidden layers of one unit each; `K = 1` yields a single affine layer.
pub fn compile_to_icnn(m: &MaxAffine) -> IcnnModel {
    let k = m.pieces.len();
    let diff = |i: usize| -> (Vec<f64>, f64) {
        let (a, b) = &m.pieces[i];
        let (a2, b2) = &m.pieces[i + 1];
        (a.iter().zip(a2).map(|(p, q)| p - q).collect(), b - b2)
    };
    let (a_last, b_last) = &m.pieces[k - 1];
    let mut layers = Vec::with_capacity(k);
    if k == 1 {
        layers.push(IcnnLayer {
            w: row_matrix(split_signed(a_last)),
            d: None,
            b: vec![*b_last],
        });
    } else {
        let (c, off) = diff(0);
        layers.push(IcnnLayer {
            w: row_matrix(split_signed(&c)),
            d: None,
            b: vec![off],
        });
        for i in 1..k - 1 {
            let (c, off) = diff(i);
            layers.push(IcnnLayer {
                w: row_matrix(vec![1.0]),
                d: Some(row_matrix(split_signed(&c))),
                b: vec![off],
            });
        }
        layers.push(IcnnLayer {
            w: row_matrix(vec![1.0]),
            d: Some(row_matrix(split_signed(a_last))),
            b: vec![*b_last],
        });
    }
    IcnnModel::from_layers(0, m.d, layers).expect("compiled layers have consistent shapes")
}

/// Lists all `2^K` activation patterns of a one-hidden-layer ICNN as affine pieces.
///
/// Piece `j` keeps unit `i` active iff bit `K - 1 - i` of `2^K - 1 - j` is set,
/// so piece 0 has every unit active and the last piece none.
pub fn enumerate_pieces(model: &IcnnModel) -> Result<MaxAffine> {
    let layers = model.layers();
    if layers.len() != 2 {
        return Err(Error::Unsupported(format!(
            "piece enumeration is defined only for a single hidden ReLU layer feeding a linear output \
             with zero passthrough; this model has {} hidden layers",
            layers.len().saturating_sub(1)
        )));
    }
    let (hidden, out) = (&layers[0], &layers[1]);
    if out.d.as_ref().is_some_and(|d| !d.is_zero()) {
        return Err(Error::Unsupported(
            "piece enumeration requires a zero passthrough; the output layer has nonzero D".into(),
        ));
    }
    if out.b.len() != 1 {
        return Err(Error::Unsupported("piece enumeration needs a scalar output".into()));
    }
    if out.w.min_value() < 0.0 {
        return Err(invalid("output weights must be nonnegative for the pieces to bound the network"));
    }
    let k = hidden.b.len();
    if k > 24 {
        return Err(invalid(format!("2^{k} pieces is too many to enumerate")));
    }
    let s = model.state_dim();
    let d = model.input_dim();
    // each unit as an affine function of the unexpanded input
    let units: Vec<(Vec<f64>, f64)> = (0..k)
        .map(|i| {
            let row = hidden.w.row(i);
            let mut a = row[..s].to_vec();
            a.extend((0..d).map(|j| row[s + j] - row[s + d + j]));
            (a, hidden.b[i])
        })
        .collect();
    let w_out = out.w.row(0);
    let full = (1usize << k) - 1;
    let pieces: Vec<(Vec<f64>, f64)> = (0..=full)
        .into_par_iter()
        .map(|j| {
            let mask = full - j;
            let mut a = vec![0.0; s + d];
            let mut b = 0.0;
            for (i, (ua, ub)) in units.iter().enumerate() {
                if mask >> (k - 1 - i) & 1 == 1 {
                    for (p, q) in a.iter_mut().zip(ua) {
                        *p += w_out[i] * q;
                    }
                    b += w_out[i] * ub;
                }
            }
            (a, b + out.b[0])
        })
        .collect();
    MaxAffine::new(pieces)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct CplConfig {
    pub k: usize,
    pub iterations: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for CplConfig {
    fn default() -> Self {
        Self {
            k: 4,
            iterations: 50,
            restarts: 10,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CplFit {
    pub model: MaxAffine,
    pub rmse: f64,
}

fn fit_affine(inputs: &[Vec<f64>], targets: &[f64], idx: &[usize]) -> Result<(Vec<f64>, f64)> {
    let d = inputs[0].len();
    let mut rows = Vec::with_capacity(idx.len() * (d + 1));
    for &i in idx {
        rows.extend_from_slice(&inputs[i]);
        rows.push(1.0);
    }
    let a = Matrix::from_row_major(idx.len(), d + 1, rows)?;
    let b: Vec<f64> = idx.iter().map(|&i| targets[i]).collect();
    let mut coef = least_squares(&a, &b)?;
    let off = coef.pop().unwrap_or(0.0);
    Ok((coef, off))
}

fn model_rmse(m: &MaxAffine, inputs: &[Vec<f64>], targets: &[f64]) -> f64 {
    let sq: f64 = inputs
        .iter()
        .zip(targets)
        .map(|(x, t)| {
            let e = m.eval(x).unwrap_or(f64::INFINITY) - t;
            e * e
        })
        .sum();
    (sq / inputs.len() as f64).sqrt()
}

/// Alternating partition / least-squares fit of a `K`-piece max-affine model.
///
/// Each restart seeds the partition with the Voronoi cells of `K` random data
/// points, then alternates refitting each cell by least squares and reassigning
/// every point to its maximizing piece (lower index on ties). The best model by
/// RMSE over all iterations and restarts is returned.
pub fn fit_cpl(inputs: &[Vec<f64>], targets: &[f64], config: &CplConfig) -> Result<CplFit> {
    let n = inputs.len();
    if n == 0 {
        return Err(Error::Empty("cpl data"));
    }
    check_dim("cpl targets", n, targets.len())?;
    let k = config.k;
    if k == 0 {
        return Err(invalid("K must be at least 1"));
    }
    if k > n {
        return Err(invalid(format!("K = {k} exceeds the sample count {n}")));
    }
    let d = inputs[0].len();
    for x in inputs {
        check_dim("cpl input", d, x.len())?;
    }
    let all: Vec<usize> = (0..n).collect();
    let global = fit_affine(inputs, targets, &all)?;
    let restarts = config.restarts.max(1);
    let fits: Vec<Result<CplFit>> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = RngStream::new(config.seed, r as u64);
            let mut perm: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut perm);
            let centers: Vec<&Vec<f64>> = perm[..k].iter().map(|&i| &inputs[i]).collect();
            let mut assign: Vec<usize> = inputs
                .iter()
                .map(|x| {
                    let mut best = (f64::INFINITY, 0);
                    for (c, ctr) in centers.iter().enumerate() {
                        let dist: f64 = x.iter().zip(*ctr).map(|(p, q)| (p - q) * (p - q)).sum();
                        if dist < best.0 {
                            best = (dist, c);
                        }
                    }
                    best.1
                })
                .collect();
            let mut pieces = vec![global.clone(); k];
            let mut best: Option<CplFit> = None;
            for _ in 0..config.iterations.max(1) {
                for (c, piece) in pieces.iter_mut().enumerate() {
                    let idx: Vec<usize> = (0..n).filter(|&i| assign[i] == c).collect();
                    if !idx.is_empty() {
                        *piece = fit_affine(inputs, targets, &idx)?;
                    }
                }
                let model = MaxAffine::new(pieces.clone())?;
                let rmse = model_rmse(&model, inputs, targets);
                if best.as_ref().is_none_or(|b| rmse < b.rmse) {
                    best = Some(CplFit { model: model.clone(), rmse });
                }
                let next: Vec<usize> = inputs.iter().map(|x| model.eval_argmax(x).map(|r| r.1)).collect::<Result<_>>()?;
                if next == assign {
                    break;
                }
                assign = next;
            }
            Ok(best.expect("at least one iteration"))
        })
        .collect();
    let mut best: Option<CplFit> = None;
    for f in fits {
        let f = f?;
        if best.as_ref().is_none_or(|b| f.rmse < b.rmse) {
            best = Some(f);
        }
    }
    Ok(best.expect("at least one restart"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::icnn::abs_model;
    use crate::numeric::seeded_stream;

    fn abs_pieces() -> MaxAffine {
        MaxAffine::new(vec![(vec![1.0], 0.0), (vec![-1.0], 0.0)]).unwrap()
    }

    #[test]
    fn eval_examples() {
        assert_eq!(abs_pieces().eval(&[3.0]).unwrap(), 3.0);
        let one = MaxAffine::new(vec![(vec![2.0, -1.0], 0.5)]).unwrap();
        assert_eq!(one.eval(&[1.0, 1.0]).unwrap(), 1.5);
        assert!(one.eval(&[1.0]).is_err());
        assert!(MaxAffine::new(vec![]).is_err());
    }

    #[test]
    fn argmax_ties_go_to_lowest_index() {
        let m = MaxAffine::new(vec![(vec![0.0], 1.0), (vec![0.0], 1.0)]).unwrap();
        assert_eq!(m.eval_argmax(&[5.0]).unwrap(), (1.0, 0));
        assert_eq!(abs_pieces().eval_argmax(&[0.0]).unwrap().1, 0);
    }

    #[test]
    fn eval_matches_loop_on_grid() {
        let mut rng = seeded_stream(1, 0);
        let m = MaxAffine::random(5, 2, &mut rng).unwrap();
        for i in 0..1000 {
            let x = [(i % 40) as f64 * 0.1 - 2.0, (i / 40) as f64 * 0.16 - 2.0];
            let mut brute = f64::NEG_INFINITY;
            for (a, b) in m.pieces() {
                brute = brute.max(a[0] * x[0] + a[1] * x[1] + b);
            }
            assert_eq!(m.eval(&x).unwrap(), brute);
        }
    }

    #[test]
    fn compiled_abs_is_exact() {
        let net = compile_to_icnn(&abs_pieces());
        assert_eq!(net.relu_count(), 1);
        assert!(net.is_nonnegative());
        for i in 0..10_000 {
            let x = -10.0 + 20.0 * i as f64 / 9999.0;
            assert!((net.eval_scalar(&[x]).unwrap() - x.abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn single_piece_compiles_to_affine_layer() {
        let m = MaxAffine::new(vec![(vec![0.5, -2.0], 3.0)]).unwrap();
        let net = compile_to_icnn(&m);
        assert_eq!(net.layers().len(), 1);
        assert_eq!(net.relu_count(), 0);
        assert_eq!(net.eval_scalar(&[2.0, 1.0]).unwrap(), 2.0);
    }

    #[test]
    fn enumerate_abs_network_gives_documented_pieces() {
        let model = IcnnModel::from_layers(
            0,
            1,
            vec![
                IcnnLayer {
                    w: Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
                    d: None,
                    b: vec![0.0, 0.0],
                },
                IcnnLayer {
                    w: Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap(),
                    d: Some(Matrix::zeros(1, 2)),
                    b: vec![0.0],
                },
            ],
        )
        .unwrap();
        let m = enumerate_pieces(&model).unwrap();
        let slopes: Vec<f64> = m.pieces().iter().map(|p| p.0[0]).collect();
        assert_eq!(slopes, vec![0.0, 1.0, -1.0, 0.0]);
        for i in 0..1001 {
            let x = -5.0 + i as f64 * 0.01;
            assert!((m.eval(&[x]).unwrap() - x.abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn enumerate_rejects_passthrough_and_depth() {
        // the hand-built |u| model routes v through a passthrough
        assert!(matches!(enumerate_pieces(&abs_model()), Err(Error::Unsupported(_))));
        let mut rng = seeded_stream(2, 0);
        let deep = IcnnModel::random(0, 1, &[3, 3, 1], &mut rng).unwrap();
        assert!(matches!(enumerate_pieces(&deep), Err(Error::Unsupported(_))));
    }

    #[test]
    fn fit_recovers_abs_and_affine() {
        let xs: Vec<Vec<f64>> = (0..401).map(|i| vec![-2.0 + i as f64 * 0.01]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x[0].abs()).collect();
        let cfg = CplConfig { k: 2, ..Default::default() };
        assert!(fit_cpl(&xs, &ys, &cfg).unwrap().rmse < 1e-6);
        let lin: Vec<f64> = xs.iter().map(|x| 0.3 * x[0] - 1.0).collect();
        let cfg = CplConfig { k: 1, ..Default::default() };
        assert!(fit_cpl(&xs, &lin, &cfg).unwrap().rmse < 1e-10);
        let cfg = CplConfig { k: 500, ..Default::default() };
        assert!(fit_cpl(&xs, &lin, &cfg).is_err());
    }

    #[test]
    fn json_round_trip() {
        let mut rng = seeded_stream(3, 0);
        let m = MaxAffine::random(4, 3, &mut rng).unwrap();
        assert_eq!(MaxAffine::from_json(&m.to_json().unwrap()).unwrap(), m);
    }
}
