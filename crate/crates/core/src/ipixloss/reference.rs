//! Loop-by-loop transcription of the inter-pixel loss, kept free of any
//! helper shared with the production path so the two can check each other.

use super::{IPixConfig, Metric};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Value of the inter-pixel loss computed with explicit loops.
pub fn interpixel_loss_reference(p: &Tensor, q: &Tensor, cfg: &IPixConfig) -> Result<f64> {
    cfg.validate()?;
    if p.shape() != q.shape() || p.shape().len() != 3 {
        return Err(Error::Shape(format!("{:?} vs {:?}", p.shape(), q.shape())));
    }
    let c = p.shape()[0];
    let hw = p.shape()[1] * p.shape()[2];
    let pd = p.data();
    let qd = q.data();

    // Ω: pixels whose largest class probability exceeds τ.
    let mut omega = Vec::new();
    for j in 0..hw {
        let mut top = pd[j];
        for k in 1..c {
            if pd[k * hw + j] > top {
                top = pd[k * hw + j];
            }
        }
        let mut z = 0.0;
        for k in 0..c {
            z += (pd[k * hw + j] - top).exp();
        }
        let mut best = 0.0;
        for k in 0..c {
            let prob = (pd[k * hw + j] - top).exp() / z;
            if prob > best {
                best = prob;
            }
        }
        if best > cfg.tau {
            omega.push(j);
        }
    }
    let m = omega.len();
    if m <= 1 {
        return Ok(0.0);
    }

    let t = cfg.temperature;
    let mut total = 0.0;
    for k in 0..c {
        let mut u = vec![0.0; m];
        let mut v = vec![0.0; m];
        let mut pmax = f64::NEG_INFINITY;
        let mut qmax = f64::NEG_INFINITY;
        for &j in &omega {
            pmax = pmax.max(pd[k * hw + j]);
            qmax = qmax.max(qd[k * hw + j]);
        }
        let mut zu = 0.0;
        let mut zv = 0.0;
        for (i, &j) in omega.iter().enumerate() {
            u[i] = ((pd[k * hw + j] - pmax) / t).exp();
            v[i] = ((qd[k * hw + j] - qmax) / t).exp();
            zu += u[i];
            zv += v[i];
        }
        for i in 0..m {
            u[i] /= zu;
            v[i] /= zv;
        }

        let phi = match cfg.metric {
            Metric::Kl => {
                let mut kl = 0.0;
                for i in 0..m {
                    if u[i] > 0.0 {
                        kl += u[i] * (u[i].ln() - v[i].ln());
                    }
                }
                kl
            }
            Metric::Correlation => {
                let mean_u = u.iter().sum::<f64>() / m as f64;
                let mean_v = v.iter().sum::<f64>() / m as f64;
                let mut cov = 0.0;
                let mut var_u = 0.0;
                let mut var_v = 0.0;
                for i in 0..m {
                    cov += (u[i] - mean_u) * (v[i] - mean_v);
                    var_u += (u[i] - mean_u) * (u[i] - mean_u);
                    var_v += (v[i] - mean_v) * (v[i] - mean_v);
                }
                if var_u.sqrt() < 1e-12 || var_v.sqrt() < 1e-12 {
                    0.0
                } else {
                    1.0 - cov / (var_u.sqrt() * var_v.sqrt())
                }
            }
        };
        total += phi;
    }
    Ok(total / (c as f64 * (m as f64).ln()))
}
