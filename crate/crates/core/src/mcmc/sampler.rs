use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{BlockStats, ChainOutput, FeasibilityAudit, McmcError, SamplerConfig};
use crate::el::{check_simplex, mele_fit};
use crate::models::{
    DataModel, GpFactor, Kernel, LatentState, ModelContext, ProcessPrior, Structure,
};
use crate::Real;

const ADAPT_BATCH: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Move {
    Accepted,
    Rejected,
    /// The proposal left the EL simplex or overflowed the link.
    Infeasible,
}

/// Current sampler position with its cached kernel and GP factor.
#[derive(Debug, Clone)]
pub struct ChainState<S: Real> {
    pub latent: LatentState<S>,
    pub kernel: Kernel<S>,
    pub gp: Option<GpFactor<S>>,
}

impl<S: Real> ChainState<S> {
    pub fn new(ctx: &ModelContext<S>, latent: LatentState<S>) -> Result<Self, McmcError> {
        let gp = ctx.gp_factor(&latent.hyper);
        let kernel = ctx.kernel(&latent, gp.as_ref())?;
        Ok(Self { latent, kernel, gp })
    }

    pub fn log_posterior(&self) -> S {
        self.kernel.total()
    }
}

/// Random-walk step `L ξ` on process coordinates `start..start + L.nrows()`.
#[derive(Debug, Clone)]
pub struct BlockProposal<S: Real> {
    pub start: usize,
    pub factor: DMatrix<S>,
}

/// Proposal factors for every block of a sweep.
#[derive(Debug, Clone)]
pub struct Proposals<S: Real> {
    pub y_blocks: Vec<BlockProposal<S>>,
    /// Lower Cholesky factor of the fixed-effects step covariance.
    pub beta: DMatrix<S>,
    /// Step standard deviations, on the log scale unless `plain_random_walk` is set.
    pub hyper: Vec<S>,
    /// Step standard deviation of the level shift `(β₀ + c, y − c)`.
    pub level: Option<S>,
}

impl<S: Real> Proposals<S> {
    fn n_blocks(&self) -> usize {
        self.y_blocks.len() + 1 + self.hyper.len() + self.level.is_some() as usize
    }

    fn scaled(&self, scales: &[f64]) -> Self {
        let nb = self.y_blocks.len();
        Self {
            y_blocks: self
                .y_blocks
                .iter()
                .zip(scales)
                .map(|(b, s)| BlockProposal {
                    start: b.start,
                    factor: &b.factor * S::lit(*s),
                })
                .collect(),
            beta: &self.beta * S::lit(scales[nb]),
            hyper: self
                .hyper
                .iter()
                .zip(&scales[nb + 1..])
                .map(|(h, s)| *h * S::lit(*s))
                .collect(),
            level: self.level.map(|l| l * S::lit(scales[scales.len() - 1])),
        }
    }
}

/// Fixed effects at the MELE (WLS for parametric comparators), latent process
/// at zero, hyperparameters at their prior medians.
pub fn initialize<S: Real>(ctx: &ModelContext<S>) -> Result<LatentState<S>, McmcError> {
    let beta = match ctx.spec.data_model {
        DataModel::EmpiricalLikelihood => {
            mele_fit(&ctx.mele_problem(), ctx.el_config())
                .map_err(|e| McmcError::NoFeasibleStart(e.to_string()))?
                .beta
        }
        DataModel::Parametric => ctx.wls().beta.clone(),
    };
    let hyper = ctx
        .spec
        .process
        .hyper_priors()
        .iter()
        .map(|p| S::lit(p.median()))
        .collect();
    Ok(LatentState {
        beta,
        process: DVector::zeros(ctx.process_dim()),
        hyper,
    })
}

/// Starting proposals: per-coordinate process steps capped by the prior
/// standard deviation at the initial hyperparameters, the WLS covariance for
/// the fixed effects, and half a log unit for hyperparameters.
pub fn initial_proposals<S: Real>(
    ctx: &ModelContext<S>,
    latent: &LatentState<S>,
    cfg: &SamplerConfig,
) -> Proposals<S> {
    let d = ctx.process_dim();
    let h = &latent.hyper;
    let prior_sd: Vec<S> = match (&ctx.spec.process, ctx.structure()) {
        (ProcessPrior::MoranIcar { .. }, Structure::Lattice(b)) => (0..d)
            .map(|k| (S::one() / (h[0] * b.reduced_precision[(k, k)])).sqrt())
            .collect(),
        (ProcessPrior::Independence { .. }, _) | (ProcessPrior::ExpGp { .. }, _) => {
            vec![h[0].sqrt(); d]
        }
        _ => vec![],
    };
    let step = S::lit(cfg.initial_step);
    let y_blocks = (0..d)
        .step_by(cfg.block_size)
        .map(|start| {
            let len = cfg.block_size.min(d - start);
            let diag = DVector::from_iterator(
                len,
                (start..start + len).map(|k| {
                    let sd = prior_sd[k];
                    if sd.finite() && sd < step {
                        sd
                    } else {
                        step
                    }
                }),
            );
            BlockProposal {
                start,
                factor: DMatrix::from_diagonal(&diag),
            }
        })
        .collect();

    let m = ctx.m();
    let scale = S::lit(2.38 * 2.38 / m as f64);
    let beta = Cholesky::new(&ctx.wls().cov_unscaled * scale)
        .map(|c| c.l())
        .unwrap_or_else(|| DMatrix::identity(m, m) * S::lit(0.1));

    let hyper = h
        .iter()
        .map(|v| {
            if cfg.plain_random_walk {
                *v * S::lit(0.5)
            } else {
                S::lit(0.5)
            }
        })
        .collect();
    let level = (!cfg.plain_random_walk)
        .then(|| ctx.level_column())
        .flatten()
        .map(|_| S::lit(0.5));
    Proposals {
        y_blocks,
        beta,
        hyper,
        level,
    }
}

fn perturb<S: Real, R: Rng>(factor: &DMatrix<S>, rng: &mut R) -> DVector<S> {
    let xi = DVector::from_iterator(
        factor.ncols(),
        (0..factor.ncols()).map(|_| S::lit(rng.sample::<f64, _>(StandardNormal))),
    );
    factor * xi
}

fn accept<S: Real, R: Rng>(log_ratio: S, rng: &mut R) -> bool {
    let u: f64 = rng.random();
    let lr = log_ratio.as_f64();
    !lr.is_nan() && u.ln() < lr
}

fn metropolis<S: Real, R: Rng>(
    ctx: &ModelContext<S>,
    chain: &mut ChainState<S>,
    latent: LatentState<S>,
    rng: &mut R,
) -> Move {
    let kernel = match ctx.kernel(&latent, chain.gp.as_ref()) {
        Ok(k) if k.log_lik > S::neg_infinity() => k,
        _ => return Move::Infeasible,
    };
    if accept(kernel.total() - chain.kernel.total(), rng) {
        chain.latent = latent;
        chain.kernel = kernel;
        Move::Accepted
    } else {
        Move::Rejected
    }
}

/// One random-walk step per contiguous block of the latent process.
pub fn update_y_blocks<S: Real, R: Rng>(
    ctx: &ModelContext<S>,
    chain: &mut ChainState<S>,
    props: &Proposals<S>,
    rng: &mut R,
) -> Vec<Move> {
    props
        .y_blocks
        .iter()
        .map(|b| {
            let step = perturb(&b.factor, rng);
            let mut latent = chain.latent.clone();
            for (k, s) in step.iter().enumerate() {
                latent.process[b.start + k] += *s;
            }
            metropolis(ctx, chain, latent, rng)
        })
        .collect()
}

pub fn update_beta<S: Real, R: Rng>(
    ctx: &ModelContext<S>,
    chain: &mut ChainState<S>,
    props: &Proposals<S>,
    rng: &mut R,
) -> Move {
    let step = perturb(&props.beta, rng);
    let mut latent = chain.latent.clone();
    latent.beta += step;
    metropolis(ctx, chain, latent, rng)
}

/// Shifts the intercept by `c` and every process coordinate by `−c`. `θ` is
/// unchanged, so only the prior moves and the EL never becomes infeasible.
pub fn update_level<S: Real, R: Rng>(
    ctx: &ModelContext<S>,
    chain: &mut ChainState<S>,
    step: S,
    rng: &mut R,
) -> Move {
    let Some(j) = ctx.level_column() else {
        return Move::Rejected;
    };
    let c = step * S::lit(rng.sample::<f64, _>(StandardNormal));
    let mut latent = chain.latent.clone();
    latent.beta[j] += c;
    latent.process.apply(|y| *y -= c);
    metropolis(ctx, chain, latent, rng)
}

struct HyperProposal<S: Real> {
    latent: LatentState<S>,
    log_prior: S,
    gp: Option<GpFactor<S>>,
    log_ratio: S,
}

fn propose_hyper<S: Real>(
    ctx: &ModelContext<S>,
    chain: &ChainState<S>,
    j: usize,
    value: S,
    plain_random_walk: bool,
) -> Option<HyperProposal<S>> {
    let prior = ctx.spec.process.hyper_priors()[j];
    if !prior.in_support(value.as_f64()) {
        return None;
    }
    let mut latent = chain.latent.clone();
    latent.hyper[j] = value;
    let gp = match ctx.spec.process {
        ProcessPrior::ExpGp { .. } => Some(ctx.gp_factor(&latent.hyper)?),
        _ => None,
    };
    let log_prior = ctx.log_prior(&latent, gp.as_ref());
    let jacobian = if plain_random_walk {
        S::zero()
    } else {
        value.ln() - chain.latent.hyper[j].ln()
    };
    let log_ratio = log_prior - chain.kernel.log_prior + jacobian;
    Some(HyperProposal {
        latent,
        log_prior,
        gp,
        log_ratio,
    })
}

/// Log acceptance ratio for moving hyperparameter `j` to `value`: only prior
/// terms change, plus the log-scale Jacobian `log(h̃/h)`.
pub fn hyper_log_ratio<S: Real>(
    ctx: &ModelContext<S>,
    chain: &ChainState<S>,
    j: usize,
    value: S,
    plain_random_walk: bool,
) -> S {
    propose_hyper(ctx, chain, j, value, plain_random_walk)
        .map_or(S::neg_infinity(), |p| p.log_ratio)
}

/// Scalar update of each hyperparameter in turn.
pub fn update_hyper<S: Real, R: Rng>(
    ctx: &ModelContext<S>,
    chain: &mut ChainState<S>,
    props: &Proposals<S>,
    plain_random_walk: bool,
    rng: &mut R,
) -> Vec<Move> {
    (0..props.hyper.len())
        .map(|j| {
            let xi = S::lit(rng.sample::<f64, _>(StandardNormal));
            let old = chain.latent.hyper[j];
            let value = if plain_random_walk {
                old + props.hyper[j] * xi
            } else {
                (old.ln() + props.hyper[j] * xi).exp()
            };
            match propose_hyper(ctx, chain, j, value, plain_random_walk) {
                Some(p) if accept(p.log_ratio, rng) => {
                    chain.latent = p.latent;
                    chain.kernel.log_prior = p.log_prior;
                    chain.gp = p.gp;
                    Move::Accepted
                }
                _ => Move::Rejected,
            }
        })
        .collect()
}

fn sweep<S: Real, R: Rng>(
    ctx: &ModelContext<S>,
    chain: &mut ChainState<S>,
    props: &Proposals<S>,
    plain_random_walk: bool,
    rng: &mut R,
) -> Vec<Move> {
    let mut moves = update_y_blocks(ctx, chain, props, rng);
    moves.push(update_beta(ctx, chain, props, rng));
    moves.extend(update_hyper(ctx, chain, props, plain_random_walk, rng));
    if let Some(step) = props.level {
        moves.push(update_level(ctx, chain, step, rng));
    }
    moves
}

fn target_rate(dim: usize) -> f64 {
    match dim {
        1 => 0.44,
        2..=4 => 0.35,
        _ => 0.25,
    }
}

/// Coordinates of block `k` in the flattened `(β, process, hyper)` vector.
fn block_coords<S: Real>(
    props: &Proposals<S>,
    m: usize,
    d: usize,
    k: usize,
) -> std::ops::Range<usize> {
    let nb = props.y_blocks.len();
    if k < nb {
        let b = &props.y_blocks[k];
        m + b.start..m + b.start + b.factor.nrows()
    } else if k == nb {
        0..m
    } else if k <= nb + props.hyper.len() {
        let j = m + d + (k - nb - 1);
        j..j + 1
    } else {
        0..1
    }
}

/// Pilot run: per-block scale adaptation over the first half, then the
/// inflated empirical covariance of the second half.
fn tune<S: Real, R: Rng>(
    ctx: &ModelContext<S>,
    chain: &mut ChainState<S>,
    props: &Proposals<S>,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Proposals<S> {
    let nb = props.n_blocks();
    let (m, d) = (ctx.m(), ctx.process_dim());
    let dims: Vec<usize> = (0..nb)
        .map(|k| block_coords(props, m, d, k).len())
        .collect();
    let half = cfg.pilot.iters / 2;
    let mut scales = vec![1.0f64; nb];
    let mut batch = vec![0usize; nb];
    let mut batch_len = 0;
    let mut late_accepts = vec![0usize; nb];
    let mut draws: Vec<Vec<f64>> = Vec::with_capacity(cfg.pilot.iters - half);

    for it in 0..cfg.pilot.iters {
        let mut current = props.scaled(&scales);
        if it >= half {
            // level shifts would put the ridge direction into every block covariance
            current.level = None;
        }
        let moves = sweep(ctx, chain, &current, cfg.plain_random_walk, rng);
        if it < half {
            for (k, mv) in moves.iter().enumerate() {
                batch[k] += (*mv == Move::Accepted) as usize;
            }
            batch_len += 1;
            if batch_len == ADAPT_BATCH || it + 1 == half {
                for k in 0..nb {
                    let rate = batch[k] as f64 / batch_len as f64;
                    scales[k] *= (2.0 * (rate - target_rate(dims[k]))).exp();
                    batch[k] = 0;
                }
                batch_len = 0;
            }
        } else {
            for (k, mv) in moves.iter().enumerate() {
                late_accepts[k] += (*mv == Move::Accepted) as usize;
            }
            let l = &chain.latent;
            let mut row: Vec<f64> = l
                .beta
                .iter()
                .chain(l.process.iter())
                .map(|v| v.as_f64())
                .collect();
            row.extend(l.hyper.iter().map(|h| {
                if cfg.plain_random_walk {
                    h.as_f64()
                } else {
                    h.as_f64().ln()
                }
            }));
            draws.push(row);
        }
    }

    let fallback = props.scaled(&scales);
    let mut tuned = fallback.clone();
    for k in 0..nb {
        let coords = block_coords(props, m, d, k);
        let dim = coords.len();
        if k > props.y_blocks.len() + props.hyper.len() || late_accepts[k] < 5.max(dim) {
            continue;
        }
        let infl = cfg.pilot.inflation.unwrap_or(2.38 * 2.38 / dim as f64);
        let Some(l) = empirical_factor(&draws, coords, infl) else {
            continue;
        };
        let l = l.map(S::lit);
        let py = props.y_blocks.len();
        if k < py {
            tuned.y_blocks[k].factor = l;
        } else if k == py {
            tuned.beta = l;
        } else {
            tuned.hyper[k - py - 1] = l[(0, 0)];
        }
    }
    tuned
}

fn empirical_factor(
    draws: &[Vec<f64>],
    coords: std::ops::Range<usize>,
    inflation: f64,
) -> Option<DMatrix<f64>> {
    let n = draws.len();
    let dim = coords.len();
    if n < 2 {
        return None;
    }
    let mut mean = DVector::<f64>::zeros(dim);
    for row in draws {
        for (a, c) in coords.clone().enumerate() {
            mean[a] += row[c];
        }
    }
    mean /= n as f64;
    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    for row in draws {
        let dev = DVector::from_iterator(dim, coords.clone().map(|c| row[c])) - &mean;
        cov += &dev * dev.transpose();
    }
    cov /= (n - 1) as f64;
    let trace = cov.trace();
    if !(trace > 0.0 && trace.is_finite()) {
        return None;
    }
    let ridge = 1e-6 * trace / dim as f64;
    for a in 0..dim {
        if !(cov[(a, a)] > 0.0) {
            return None;
        }
        cov[(a, a)] += ridge;
    }
    Cholesky::new(cov * inflation).map(|c| c.l())
}

fn state_is_feasible<S: Real>(ctx: &ModelContext<S>, chain: &ChainState<S>) -> bool {
    if ctx.spec.data_model == DataModel::Parametric {
        return true;
    }
    let Some(el) = chain.kernel.el.as_ref() else {
        return false;
    };
    el.feasible
        && ctx
            .equations()
            .residuals(ctx.z_observed(), el.theta.as_slice())
            .map(|r| check_simplex(&el.weights, &r, S::lit(ctx.el_config().eps)))
            .unwrap_or(false)
}

/// Initializes, optionally tunes with a pilot run, then samples.
pub fn run_chain<S: Real>(
    ctx: &ModelContext<S>,
    cfg: &SamplerConfig,
) -> Result<ChainOutput, McmcError> {
    cfg.validate()?;
    let init = initialize(ctx)?;
    run_chain_from(ctx, cfg, init)
}

pub fn run_chain_from<S: Real>(
    ctx: &ModelContext<S>,
    cfg: &SamplerConfig,
    init: LatentState<S>,
) -> Result<ChainOutput, McmcError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut chain = ChainState::new(ctx, init)?;
    if !chain.log_posterior().finite() {
        return Err(McmcError::NoFeasibleStart(
            "initial state has zero posterior density".into(),
        ));
    }
    let mut props = initial_proposals(ctx, &chain.latent, cfg);
    if cfg.pilot.enabled {
        props = tune(ctx, &mut chain, &props, cfg, &mut rng);
    }

    let mut blocks: Vec<BlockStats> = (0..props.y_blocks.len())
        .map(|k| BlockStats::new(format!("y_block{k}")))
        .collect();
    blocks.push(BlockStats::new("beta"));
    blocks.extend(
        ctx.spec
            .process
            .hyper_names()
            .into_iter()
            .map(BlockStats::new),
    );
    if props.level.is_some() {
        blocks.push(BlockStats::new("level"));
    }

    let names = ctx.parameter_names();
    let dim = names.len();
    let n = ctx.n();
    let kept = cfg.kept();
    let mut samples = Vec::with_capacity(kept * dim);
    let mut theta = Vec::with_capacity(kept * n);
    let mut log_posterior = Vec::with_capacity(kept);
    let mut audit = cfg.audit_feasibility.then_some(FeasibilityAudit {
        checked: 0,
        passed: 0,
    });

    let assemble =
        |samples: &[f64], theta: &[f64], lp: &[f64], blocks: &[BlockStats], audit| ChainOutput {
            names: names.clone(),
            samples: DMatrix::from_row_slice(lp.len(), dim, samples),
            theta: DMatrix::from_row_slice(lp.len(), n, theta),
            log_posterior: lp.to_vec(),
            infeasible: blocks.iter().map(|b| b.infeasible).sum(),
            blocks: blocks.to_vec(),
            audit,
        };

    for it in 0..cfg.n_iter {
        let moves = sweep(ctx, &mut chain, &props, cfg.plain_random_walk, &mut rng);
        for (b, mv) in blocks.iter_mut().zip(moves) {
            b.record(mv);
        }
        let lp = chain.log_posterior();
        if !lp.finite() {
            return Err(McmcError::ChainDiverged {
                iteration: it,
                partial: Box::new(assemble(&samples, &theta, &log_posterior, &blocks, audit)),
            });
        }
        debug_assert!(state_is_feasible(ctx, &chain));
        if it < cfg.n_burn {
            continue;
        }
        let l = &chain.latent;
        samples.extend(
            l.beta
                .iter()
                .chain(l.process.iter())
                .chain(l.hyper.iter())
                .map(|v| v.as_f64()),
        );
        theta.extend(chain.kernel.theta.iter().map(|v| v.as_f64()));
        log_posterior.push(lp.as_f64());
        if let Some(a) = audit.as_mut() {
            a.checked += 1;
            a.passed += state_is_feasible(ctx, &chain) as usize;
        }
    }
    Ok(assemble(&samples, &theta, &log_posterior, &blocks, audit))
}
