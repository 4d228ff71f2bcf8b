//! Training objectives: the clamp-based triplet loss on scalar hash
//! values, optional contrastive regularizers (NT-Xent and Barlow
//! Twins), and empirical collision-rate estimation.

use crate::corpus::{Dataset, LabeledPair};
use crate::encoder::EncoderModel;
use crate::{Error, Result};

/// Clamp-loss parameters: collision radius R, approximation factor c,
/// and the weight on the negative term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NlshParams {
    pub r: f64,
    pub c: f64,
    pub lambda_neg: f64,
}

impl Default for NlshParams {
    fn default() -> Self {
        NlshParams { r: 0.01, c: 3.0, lambda_neg: 1.0 }
    }
}

impl NlshParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0) || !(self.c > 1.0) || !(self.lambda_neg >= 0.0) {
            return Err(Error::Config(format!(
                "loss params need R>0, c>1, lambda_neg>=0 (got R={}, c={}, lambda={})",
                self.r, self.c, self.lambda_neg
            )));
        }
        Ok(())
    }

    pub fn cr(&self) -> f64 {
        self.c * self.r
    }

    /// Global minimum of the loss, attained iff |hp-hq| <= R and
    /// |hp-hr| >= cR.
    pub fn floor(&self) -> f64 {
        self.r - self.lambda_neg * self.cr()
    }
}

fn check_finite(vals: &[f64], context: &str) -> Result<()> {
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: context.to_string() });
    }
    Ok(())
}

/// max(R, |hp-hq|) - lambda * min(cR, |hp-hr|)
pub fn nlsh_loss(hp: f64, hq: f64, hr: f64, params: &NlshParams) -> Result<f64> {
    check_finite(&[hp, hq, hr], "nlsh_loss input")?;
    let pos = (hp - hq).abs().max(params.r);
    let neg = (hp - hr).abs().min(params.cr());
    Ok(pos - params.lambda_neg * neg)
}

/// Piecewise-exact subgradient of `nlsh_loss` w.r.t. (hp, hq, hr).
///
/// At a clamp boundary the flat (clamped) branch is chosen, so the
/// contribution is zero there.
pub fn nlsh_loss_grad(hp: f64, hq: f64, hr: f64, params: &NlshParams) -> Result<(f64, f64, f64)> {
    check_finite(&[hp, hq, hr], "nlsh_loss_grad input")?;
    let mut g = (0.0, 0.0, 0.0);
    let dq = hp - hq;
    if dq.abs() > params.r {
        let s = dq.signum();
        g.0 += s;
        g.1 -= s;
    }
    let dr = hp - hr;
    if dr.abs() < params.cr() {
        let s = if dr == 0.0 { 0.0 } else { dr.signum() };
        g.0 -= params.lambda_neg * s;
        g.2 += params.lambda_neg * s;
    }
    Ok(g)
}

/// Contrastive regularization config. Disabled by default; when enabled
/// both NT-Xent and Barlow Twins are added, scaled by `weight`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastiveParams {
    pub enabled: bool,
    pub weight: f64,
    pub temperature: f64,
    pub bt_offdiag_weight: f64,
}

impl Default for ContrastiveParams {
    fn default() -> Self {
        ContrastiveParams { enabled: false, weight: 0.1, temperature: 0.07, bt_offdiag_weight: 0.005 }
    }
}

fn check_views(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch { expected: a.len(), got: b.len() });
    }
    if a.len() < 2 {
        return Err(Error::BatchTooSmall { got: a.len() });
    }
    let d = a[0].len();
    for v in a.iter().chain(b.iter()) {
        if v.len() != d {
            return Err(Error::DimMismatch { expected: d, got: v.len() });
        }
    }
    Ok(())
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Normalized-temperature cross entropy over in-batch negatives.
///
/// Every view is an anchor once; its candidates are the other 2N-1
/// views and the target is its paired view. Inputs are unit vectors by
/// contract, so similarity is the plain dot product.
pub fn simclr_loss(a: &[Vec<f64>], b: &[Vec<f64>], temperature: f64) -> Result<f64> {
    Ok(simclr_grad(a, b, temperature)?.0)
}

/// NT-Xent loss plus analytic gradients w.r.t. both views.
pub fn simclr_grad(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    temperature: f64,
) -> Result<(f64, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    check_views(a, b)?;
    if !(temperature > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
    }
    let n = a.len();
    let d = a[0].len();
    let total = 2 * n;
    let z: Vec<&[f64]> = a.iter().chain(b.iter()).map(|v| v.as_slice()).collect();
    let pos = |i: usize| (i + n) % total;

    let mut loss = 0.0;
    let mut grads = vec![vec![0.0; d]; total];
    let inv = 1.0 / total as f64;
    for i in 0..total {
        let mut sims = vec![0.0; total];
        let mut max_s = f64::NEG_INFINITY;
        for k in 0..total {
            if k == i {
                continue;
            }
            sims[k] = dot(z[i], z[k]) / temperature;
            max_s = max_s.max(sims[k]);
        }
        let mut denom = 0.0;
        for k in 0..total {
            if k != i {
                denom += (sims[k] - max_s).exp();
            }
        }
        loss += inv * (denom.ln() + max_s - sims[pos(i)]);
        for k in 0..total {
            if k == i {
                continue;
            }
            let p = (sims[k] - max_s).exp() / denom;
            let coeff = inv * (p - if k == pos(i) { 1.0 } else { 0.0 }) / temperature;
            for j in 0..d {
                grads[i][j] += coeff * z[k][j];
                grads[k][j] += coeff * z[i][j];
            }
        }
    }
    let gb = grads.split_off(n);
    Ok((loss, grads, gb))
}

/// Barlow Twins redundancy-reduction loss over the batch-standardized
/// cross-correlation matrix of the two views.
pub fn barlow_twins_loss(a: &[Vec<f64>], b: &[Vec<f64>], offdiag_weight: f64) -> Result<f64> {
    Ok(barlow_twins_grad(a, b, offdiag_weight)?.0)
}

struct Standardized {
    z: Vec<Vec<f64>>,
    sigma: Vec<f64>,
}

fn standardize(views: &[Vec<f64>]) -> Result<Standardized> {
    let n = views.len();
    let d = views[0].len();
    let mut mu = vec![0.0; d];
    for v in views {
        for (m, x) in mu.iter_mut().zip(v) {
            *m += x;
        }
    }
    for m in mu.iter_mut() {
        *m /= n as f64;
    }
    let mut var = vec![0.0; d];
    for v in views {
        for j in 0..d {
            let c = v[j] - mu[j];
            var[j] += c * c;
        }
    }
    let mut sigma = vec![0.0; d];
    for j in 0..d {
        let s = (var[j] / n as f64).sqrt();
        if s < 1e-12 {
            return Err(Error::ZeroVariance { dim: j });
        }
        sigma[j] = s;
    }
    let z = views
        .iter()
        .map(|v| (0..d).map(|j| (v[j] - mu[j]) / sigma[j]).collect())
        .collect();
    Ok(Standardized { z, sigma })
}

/// Barlow Twins loss plus analytic gradients w.r.t. both raw views.
pub fn barlow_twins_grad(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    offdiag_weight: f64,
) -> Result<(f64, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    check_views(a, b)?;
    let n = a.len();
    let d = a[0].len();
    let sa = standardize(a)?;
    let sb = standardize(b)?;

    // C = Za^T Zb / N
    let mut c = vec![vec![0.0; d]; d];
    for t in 0..n {
        for i in 0..d {
            let zi = sa.z[t][i];
            for j in 0..d {
                c[i][j] += zi * sb.z[t][j];
            }
        }
    }
    for row in c.iter_mut() {
        for v in row.iter_mut() {
            *v /= n as f64;
        }
    }

    let mut loss = 0.0;
    let mut g_c = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            if i == j {
                let diff = 1.0 - c[i][j];
                loss += diff * diff;
                g_c[i][j] = -2.0 * diff;
            } else {
                loss += offdiag_weight * c[i][j] * c[i][j];
                g_c[i][j] = 2.0 * offdiag_weight * c[i][j];
            }
        }
    }

    // dL/dZa = (G Zb^T)^T / N, dL/dZb = (G^T Za^T)^T / N
    let mut g_za = vec![vec![0.0; d]; n];
    let mut g_zb = vec![vec![0.0; d]; n];
    for t in 0..n {
        for i in 0..d {
            let mut acc = 0.0;
            for j in 0..d {
                acc += g_c[i][j] * sb.z[t][j];
            }
            g_za[t][i] = acc / n as f64;
        }
        for j in 0..d {
            let mut acc = 0.0;
            for i in 0..d {
                acc += g_c[i][j] * sa.z[t][i];
            }
            g_zb[t][j] = acc / n as f64;
        }
    }

    let ga = unstandardize_grad(&g_za, &sa, n, d);
    let gb = unstandardize_grad(&g_zb, &sb, n, d);
    Ok((loss, ga, gb))
}

/// Batch-norm style backward through per-dimension standardization.
fn unstandardize_grad(g_z: &[Vec<f64>], s: &Standardized, n: usize, d: usize) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; d]; n];
    for j in 0..d {
        let mean_g: f64 = g_z.iter().map(|g| g[j]).sum::<f64>() / n as f64;
        let mean_gz: f64 = g_z.iter().zip(&s.z).map(|(g, z)| g[j] * z[j]).sum::<f64>() / n as f64;
        for t in 0..n {
            out[t][j] = (g_z[t][j] - mean_g - s.z[t][j] * mean_gz) / s.sigma[j];
        }
    }
    out
}

/// Mean clamp loss over the batch plus, when enabled, the weighted sum
/// of both contrastive terms over the embedding views.
pub fn total_loss(
    triple_hashes: &[(f64, f64, f64)],
    views: Option<(&[Vec<f64>], &[Vec<f64>])>,
    nlsh: &NlshParams,
    con: &ContrastiveParams,
) -> Result<f64> {
    let mut loss = 0.0;
    for &(hp, hq, hr) in triple_hashes {
        loss += nlsh_loss(hp, hq, hr, nlsh)?;
    }
    if !triple_hashes.is_empty() {
        loss /= triple_hashes.len() as f64;
    }
    if con.enabled {
        if let Some((a, b)) = views {
            loss += con.weight
                * (simclr_loss(a, b, con.temperature)? + barlow_twins_loss(a, b, con.bt_offdiag_weight)?);
        }
    }
    Ok(loss)
}

/// Empirical collision rates: `p1_hat` over matched pairs, `p2_hat`
/// over nonmatched pairs. A pair collides when the scalar hashes are
/// within R of each other.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LshFamilyEstimate {
    pub p1_hat: f64,
    pub p2_hat: f64,
    pub matched: usize,
    pub nonmatched: usize,
}

pub fn estimate_p1_p2(
    model: &EncoderModel,
    dataset: &Dataset,
    pairs: &[LabeledPair],
    params: &NlshParams,
) -> Result<LshFamilyEstimate> {
    params.validate()?;
    let matched: Vec<&LabeledPair> = pairs.iter().filter(|p| p.label).collect();
    let nonmatched: Vec<&LabeledPair> = pairs.iter().filter(|p| !p.label).collect();
    if matched.is_empty() {
        return Err(Error::EmptyPairSet { which: "matched" });
    }
    if nonmatched.is_empty() {
        return Err(Error::EmptyPairSet { which: "nonmatched" });
    }

    let mut hash_a = std::collections::HashMap::new();
    let mut hash_b = std::collections::HashMap::new();
    let mut collision_rate = |side: &[&LabeledPair]| -> Result<f64> {
        let mut hits = 0usize;
        for p in side {
            let ha = match hash_a.get(&p.id_a) {
                Some(&h) => h,
                None => {
                    let rec = dataset.record_a(&p.id_a).ok_or_else(|| Error::DanglingId {
                        id: p.id_a.clone(),
                        column: "ltable_id".into(),
                    })?;
                    let h = model.scalar_hash(rec)?;
                    hash_a.insert(p.id_a.clone(), h);
                    h
                }
            };
            let hb = match hash_b.get(&p.id_b) {
                Some(&h) => h,
                None => {
                    let rec = dataset.record_b(&p.id_b).ok_or_else(|| Error::DanglingId {
                        id: p.id_b.clone(),
                        column: "rtable_id".into(),
                    })?;
                    let h = model.scalar_hash(rec)?;
                    hash_b.insert(p.id_b.clone(), h);
                    h
                }
            };
            if (ha - hb).abs() <= params.r {
                hits += 1;
            }
        }
        Ok(hits as f64 / side.len() as f64)
    };

    let p1_hat = collision_rate(&matched)?;
    let p2_hat = collision_rate(&nonmatched)?;
    Ok(LshFamilyEstimate { p1_hat, p2_hat, matched: matched.len(), nonmatched: nonmatched.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const P: NlshParams = NlshParams { r: 0.01, c: 3.0, lambda_neg: 1.0 };

    #[test]
    fn loss_both_clamps_active() {
        // hp=hq, hr far: max(R,0) - min(cR, big) = R - cR
        let l = nlsh_loss(0.5, 0.5, 0.9, &P).unwrap();
        assert!((l - (-0.02)).abs() < 1e-15);
    }

    #[test]
    fn loss_degenerate_triple() {
        let l = nlsh_loss(0.3, 0.3, 0.3, &P).unwrap();
        assert!((l - 0.01).abs() < 1e-15);
    }

    #[test]
    fn loss_direct_formula_evaluation() {
        let l = nlsh_loss(0.20, 0.25, 0.22, &P).unwrap();
        assert!((l - 0.03).abs() < 1e-15, "got {l}");
    }

    #[test]
    fn loss_rejects_non_finite() {
        assert!(nlsh_loss(f64::NAN, 0.0, 0.0, &P).is_err());
        assert!(nlsh_loss_grad(0.0, f64::INFINITY, 0.0, &P).is_err());
    }

    #[test]
    fn grad_flat_region_is_zero() {
        assert_eq!(nlsh_loss_grad(0.5, 0.5, 0.9, &P).unwrap(), (0.0, 0.0, 0.0));
    }

    #[test]
    fn grad_single_active_term() {
        // |hp-hq| > R with hp > hq, |hp-hr| >= cR
        let g = nlsh_loss_grad(0.5, 0.4, 0.0, &P).unwrap();
        assert_eq!(g, (1.0, -1.0, 0.0));
    }

    #[test]
    fn grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let step = 1e-6;
        let mut checked = 0;
        while checked < 1000 {
            let hp = rng.gen_range(-1.0..1.0);
            let hq = rng.gen_range(-1.0..1.0);
            let hr = rng.gen_range(-1.0..1.0);
            // stay away from the clamp boundaries
            if ((hp - hq as f64).abs() - P.r).abs() < 50.0 * step
                || ((hp - hr as f64).abs() - P.cr()).abs() < 50.0 * step
                || (hp - hr as f64).abs() < 50.0 * step
            {
                continue;
            }
            let (gp, gq, gr) = nlsh_loss_grad(hp, hq, hr, &P).unwrap();
            let fd = |f: &dyn Fn(f64) -> f64| (f(step) - f(-step)) / (2.0 * step);
            let fp = fd(&|e| nlsh_loss(hp + e, hq, hr, &P).unwrap());
            let fq = fd(&|e| nlsh_loss(hp, hq + e, hr, &P).unwrap());
            let fr = fd(&|e| nlsh_loss(hp, hq, hr + e, &P).unwrap());
            for (a, n) in [(gp, fp), (gq, fq), (gr, fr)] {
                let denom = a.abs().max(n.abs()).max(1e-9);
                assert!((a - n).abs() / denom < 1e-4, "analytic {a} vs fd {n}");
            }
            checked += 1;
        }
    }

    proptest! {
        #[test]
        fn loss_never_below_floor(hp in -1.0..1.0f64, hq in -1.0..1.0f64, hr in -1.0..1.0f64) {
            let l = nlsh_loss(hp, hq, hr, &P).unwrap();
            prop_assert!(l >= P.floor() - 1e-15);
            let at_floor = (hp - hq).abs() <= P.r && (hp - hr).abs() >= P.cr();
            prop_assert_eq!((l - P.floor()).abs() < 1e-15, at_floor);
        }

        #[test]
        fn positive_term_symmetric_under_swap(hp in -1.0..1.0f64, hq in -1.0..1.0f64, hr in -1.0..1.0f64) {
            // with lambda=0 only the max-term remains, which is symmetric in (hp, hq)
            let p0 = NlshParams { lambda_neg: 0.0, ..P };
            prop_assert_eq!(
                nlsh_loss(hp, hq, hr, &p0).unwrap(),
                nlsh_loss(hq, hp, hr, &p0).unwrap()
            );
        }
    }

    fn unit(v: Vec<f64>) -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    }

    #[test]
    fn simclr_two_orthogonal_pairs_closed_form() {
        // pair views identical, the two pairs orthogonal, temperature 1:
        // each anchor sees its positive at sim 1 and two negatives at 0,
        // so the per-anchor loss is -ln(e / (e + 2)) = ln(1 + 2/e)
        let v = vec![1.0, 0.0];
        let w = vec![0.0, 1.0];
        let a = vec![v.clone(), w.clone()];
        let b = vec![v, w];
        let loss = simclr_loss(&a, &b, 1.0).unwrap();
        let expected = (1.0 + 2.0 * (-1.0f64).exp()).ln();
        assert!((loss - expected).abs() < 1e-12, "loss {loss} vs {expected}");
    }

    #[test]
    fn simclr_all_identical_is_uniform_softmax() {
        for n in [2usize, 3, 5] {
            let e = unit(vec![1.0, 1.0, 1.0]);
            let a = vec![e.clone(); n];
            let b = vec![e.clone(); n];
            let loss = simclr_loss(&a, &b, 0.5).unwrap();
            let expected = ((2 * n - 1) as f64).ln();
            assert!((loss - expected).abs() < 1e-12, "n={n}: {loss} vs {expected}");
        }
    }

    #[test]
    fn simclr_permutation_invariant() {
        let a = vec![unit(vec![1.0, 2.0]), unit(vec![-1.0, 0.5]), unit(vec![0.3, 0.9])];
        let b = vec![unit(vec![1.1, 1.9]), unit(vec![-0.9, 0.6]), unit(vec![0.2, 1.0])];
        let l1 = simclr_loss(&a, &b, 0.07).unwrap();
        let perm = [2usize, 0, 1];
        let ap: Vec<_> = perm.iter().map(|&i| a[i].clone()).collect();
        let bp: Vec<_> = perm.iter().map(|&i| b[i].clone()).collect();
        let l2 = simclr_loss(&ap, &bp, 0.07).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
    }

    #[test]
    fn simclr_rotation_invariant() {
        // 2-D rotation by an arbitrary angle
        let th: f64 = 0.7;
        let rot = |v: &[f64]| vec![v[0] * th.cos() - v[1] * th.sin(), v[0] * th.sin() + v[1] * th.cos()];
        let a = vec![unit(vec![1.0, 2.0]), unit(vec![-1.0, 0.5])];
        let b = vec![unit(vec![0.9, 2.1]), unit(vec![-1.1, 0.6])];
        let l1 = simclr_loss(&a, &b, 0.3).unwrap();
        let ar: Vec<_> = a.iter().map(|v| rot(v)).collect();
        let br: Vec<_> = b.iter().map(|v| rot(v)).collect();
        let l2 = simclr_loss(&ar, &br, 0.3).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
    }

    #[test]
    fn simclr_rejects_small_batch() {
        let a = vec![vec![1.0, 0.0]];
        let b = vec![vec![1.0, 0.0]];
        assert!(matches!(simclr_loss(&a, &b, 1.0), Err(Error::BatchTooSmall { .. })));
    }

    #[test]
    fn simclr_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 3;
        let d = 4;
        let mk = |rng: &mut ChaCha8Rng| {
            (0..n).map(|_| unit((0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())).collect::<Vec<_>>()
        };
        let a = mk(&mut rng);
        let b = mk(&mut rng);
        let (_, ga, gb) = simclr_grad(&a, &b, 0.5).unwrap();
        let step = 1e-6;
        for t in 0..n {
            for j in 0..d {
                let mut ap = a.clone();
                ap[t][j] += step;
                let mut am = a.clone();
                am[t][j] -= step;
                let fd = (simclr_loss(&ap, &b, 0.5).unwrap() - simclr_loss(&am, &b, 0.5).unwrap())
                    / (2.0 * step);
                assert!((ga[t][j] - fd).abs() < 1e-6, "a[{t}][{j}]: {} vs {fd}", ga[t][j]);

                let mut bp = b.clone();
                bp[t][j] += step;
                let mut bm = b.clone();
                bm[t][j] -= step;
                let fd = (simclr_loss(&a, &bp, 0.5).unwrap() - simclr_loss(&a, &bm, 0.5).unwrap())
                    / (2.0 * step);
                assert!((gb[t][j] - fd).abs() < 1e-6, "b[{t}][{j}]: {} vs {fd}", gb[t][j]);
            }
        }
    }

    #[test]
    fn barlow_twins_identical_views_on_toy_batch() {
        // 4×2 toy batch; identical views mean C_ii = 1 so only the
        // off-diagonal term contributes. Computed explicitly below.
        let a = vec![vec![1.0, 2.0], vec![-1.0, 0.0], vec![0.5, -2.0], vec![-0.5, 0.0]];
        let w = 0.13;
        let loss = barlow_twins_loss(&a, &a, w).unwrap();

        // explicit reference: standardize, form C, sum the terms
        let n = 4.0;
        let mean: Vec<f64> = (0..2).map(|j| a.iter().map(|v| v[j]).sum::<f64>() / n).collect();
        let sd: Vec<f64> = (0..2)
            .map(|j| (a.iter().map(|v| (v[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt())
            .collect();
        let z: Vec<Vec<f64>> =
            a.iter().map(|v| vec![(v[0] - mean[0]) / sd[0], (v[1] - mean[1]) / sd[1]]).collect();
        let mut c = [[0.0; 2]; 2];
        for t in 0..4 {
            for i in 0..2 {
                for j in 0..2 {
                    c[i][j] += z[t][i] * z[t][j] / n;
                }
            }
        }
        let expected = (1.0 - c[0][0]).powi(2)
            + (1.0 - c[1][1]).powi(2)
            + w * (c[0][1] * c[0][1] + c[1][0] * c[1][0]);
        assert!((loss - expected).abs() < 1e-12);
        assert!((c[0][0] - 1.0).abs() < 1e-12 && (c[1][1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn barlow_twins_uncorrelated_views_diagonal_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 4000;
        let d = 8;
        let mk = |rng: &mut ChaCha8Rng| {
            (0..n)
                .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>())
                .collect::<Vec<_>>()
        };
        let a = mk(&mut rng);
        let b = mk(&mut rng);
        let loss = barlow_twins_loss(&a, &b, 0.0).unwrap();
        let dd = d as f64;
        assert!((loss - dd).abs() < 0.1 * dd, "diagonal term {loss} vs {dd}");
    }

    #[test]
    fn barlow_twins_identical_rows_error() {
        let a = vec![vec![1.0, 2.0]; 4];
        assert!(matches!(barlow_twins_loss(&a, &a, 0.1), Err(Error::ZeroVariance { .. })));
    }

    #[test]
    fn barlow_twins_permutation_rotation_invariant() {
        let a = vec![vec![1.0, 2.0, -1.0], vec![-1.0, 0.0, 2.0], vec![0.5, -2.0, 0.3], vec![0.1, 1.0, -0.4]];
        let b = vec![vec![0.9, 2.1, -1.2], vec![-1.2, 0.1, 1.8], vec![0.6, -1.9, 0.4], vec![0.0, 0.9, -0.3]];
        let l1 = barlow_twins_loss(&a, &b, 0.2).unwrap();
        let perm = [2usize, 0, 1];
        let permute =
            |vs: &[Vec<f64>]| vs.iter().map(|v| perm.iter().map(|&i| v[i]).collect()).collect::<Vec<Vec<f64>>>();
        let l2 = barlow_twins_loss(&permute(&a), &permute(&b), 0.2).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
    }

    #[test]
    fn barlow_twins_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 5;
        let d = 3;
        let mk = |rng: &mut ChaCha8Rng| {
            (0..n)
                .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>())
                .collect::<Vec<_>>()
        };
        let a = mk(&mut rng);
        let b = mk(&mut rng);
        let w = 0.05;
        let (_, ga, gb) = barlow_twins_grad(&a, &b, w).unwrap();
        let step = 1e-6;
        for t in 0..n {
            for j in 0..d {
                let mut ap = a.clone();
                ap[t][j] += step;
                let mut am = a.clone();
                am[t][j] -= step;
                let fd = (barlow_twins_loss(&ap, &b, w).unwrap()
                    - barlow_twins_loss(&am, &b, w).unwrap())
                    / (2.0 * step);
                let denom = ga[t][j].abs().max(fd.abs()).max(1e-6);
                assert!((ga[t][j] - fd).abs() / denom < 1e-5, "a[{t}][{j}]: {} vs {fd}", ga[t][j]);

                let mut bp = b.clone();
                bp[t][j] += step;
                let mut bm = b.clone();
                bm[t][j] -= step;
                let fd = (barlow_twins_loss(&a, &bp, w).unwrap()
                    - barlow_twins_loss(&a, &bm, w).unwrap())
                    / (2.0 * step);
                let denom = gb[t][j].abs().max(fd.abs()).max(1e-6);
                assert!((gb[t][j] - fd).abs() / denom < 1e-5, "b[{t}][{j}]: {} vs {fd}", gb[t][j]);
            }
        }
    }

    #[test]
    fn total_loss_contrastive_disabled_is_mean_nlsh() {
        let hashes = vec![(0.5, 0.5, 0.9), (0.2, 0.25, 0.22)];
        let con = ContrastiveParams::default();
        let total = total_loss(&hashes, None, &P, &con).unwrap();
        let mean = (nlsh_loss(0.5, 0.5, 0.9, &P).unwrap() + nlsh_loss(0.2, 0.25, 0.22, &P).unwrap()) / 2.0;
        assert!((total - mean).abs() < 1e-15);
    }

    #[test]
    fn total_loss_adds_weighted_contrastive() {
        let hashes = vec![(0.5, 0.5, 0.9), (0.2, 0.25, 0.22)];
        let a = vec![unit(vec![1.0, 2.0]), unit(vec![-1.0, 0.5])];
        let b = vec![unit(vec![1.1, 1.9]), unit(vec![-0.9, 0.6])];
        let con = ContrastiveParams { enabled: true, weight: 0.1, ..ContrastiveParams::default() };
        let total = total_loss(&hashes, Some((&a, &b)), &P, &con).unwrap();
        let mean = (nlsh_loss(0.5, 0.5, 0.9, &P).unwrap() + nlsh_loss(0.2, 0.25, 0.22, &P).unwrap()) / 2.0;
        let s = simclr_loss(&a, &b, con.temperature).unwrap();
        let bt = barlow_twins_loss(&a, &b, con.bt_offdiag_weight).unwrap();
        assert!((total - (mean + 0.1 * (s + bt))).abs() < 1e-12);
    }

    #[test]
    fn total_loss_floor_batch() {
        let hashes = vec![(0.5, 0.5, 0.9); 8];
        let total = total_loss(&hashes, None, &P, &ContrastiveParams::default()).unwrap();
        assert!((total - P.floor()).abs() < 1e-15);
    }

    #[test]
    fn estimate_on_zero_head_model_collides_everything() {
        use crate::corpus::Record;
        let mk = |id: &str, text: &str| {
            Record::new(id, vec![("name".to_string(), text.to_string())])
        };
        let a = vec![mk("a1", "ipod"), mk("a2", "cable")];
        let b = vec![mk("b1", "ipod nano"), mk("b2", "usb cable")];
        let pairs = vec![
            LabeledPair { id_a: "a1".into(), id_b: "b1".into(), label: true },
            LabeledPair { id_a: "a2".into(), id_b: "b1".into(), label: false },
        ];
        let d = Dataset::new(a, b, pairs).unwrap();
        let feat = crate::encoder::Featurizer::new(64, 1).unwrap();
        let dims = crate::encoder::ModelDims { e_dim: 8, mlp_hidden: 8, d: 8, h: 8 };
        let mut model = crate::encoder::init_model(feat, &dims, 1).unwrap();
        model.hw1 = crate::encoder::Mat::zeros(8, 8);
        model.hb1 = vec![0.0; 8];
        model.hw2 = vec![0.0; 8];
        model.hb2 = 0.0;
        let est = estimate_p1_p2(&model, &d, &d.pairs.clone(), &P).unwrap();
        assert_eq!(est.p1_hat, 1.0);
        assert_eq!(est.p2_hat, 1.0);

        // empty nonmatch side errors
        let only_matches: Vec<LabeledPair> =
            d.pairs.iter().filter(|p| p.label).cloned().collect();
        assert!(matches!(
            estimate_p1_p2(&model, &d, &only_matches, &P),
            Err(Error::EmptyPairSet { which: "nonmatched" })
        ));
    }
}
