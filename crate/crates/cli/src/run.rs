//! Executes the analyses of a job and renders the report.

use std::fmt::Write as _;

use anyhow::Context;
use nica_kms::algebra::{BlockAlgebra, TracialState};
use nica_kms::dynamics::{classify_injectivity, dilate, invariance_ideal, DilationTrace, DynamicalSystem, ExtendedTrace};
use nica_kms::fock::{build_representation, check_nica_pair, core_independence_check, vacuum_functional};
use nica_kms::kms::{
    cnp_descent, eval_kms_infinity, no_kms_certificate, pm_mass, recover_trace, scope_monomials, verify_kms,
    KmsFunctional, KmsParams, PsiTau, Regime, Scope,
};
use nica_kms::lattice::{Grid, MultiIndex};
use nica_kms::linalg::{format_complex, CMatrix};
use nica_kms::monomial::{defect_projection, Monomial, MonomialSum};
use nica_kms::multikms::classify_prescribing_sets;
use nica_kms::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Analysis, GeneratorSpec, JobConfig};

pub struct Outcome {
    pub report: String,
    pub faults: usize,
    pub findings: usize,
}

/// What one analysis produced: its text and how many findings it counted.
struct Section {
    text: String,
    findings: usize,
}

impl Section {
    fn new() -> Self {
        Section {
            text: String::new(),
            findings: 0,
        }
    }

    fn line(&mut self, s: impl AsRef<str>) {
        self.text.push_str(s.as_ref());
        self.text.push('\n');
    }
}

fn sci(x: f64) -> String {
    format!("{x:.6e}")
}

fn vector(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
    format!("({})", parts.join(","))
}

pub fn build_system(cfg: &JobConfig) -> anyhow::Result<DynamicalSystem> {
    let algebra = BlockAlgebra::new(cfg.blocks.clone()).context("algebra")?;
    let dim = algebra.dim();
    let matrices = cfg
        .generators
        .iter()
        .map(|g| match g {
            GeneratorSpec::Identity => CMatrix::identity(dim, dim),
            GeneratorSpec::Rows(rows) => CMatrix::from_fn(dim, dim, |r, c| rows[r][c]),
        })
        .collect();
    DynamicalSystem::from_matrices(algebra, matrices).context("system")
}

fn traces(cfg: &JobConfig, sys: &DynamicalSystem) -> anyhow::Result<Vec<(String, TracialState)>> {
    if cfg.traces.is_empty() {
        let k = sys.algebra().num_blocks();
        return Ok(vec![(
            "uniform".into(),
            TracialState::from_unnormalized(sys.algebra(), vec![1.0; k])?,
        )]);
    }
    cfg.traces
        .iter()
        .map(|(name, w)| {
            TracialState::from_unnormalized(sys.algebra(), w.clone())
                .map(|t| (name.clone(), t))
                .with_context(|| format!("trace `{name}`"))
        })
        .collect()
}

struct Ctx<'a> {
    cfg: &'a JobConfig,
    sys: DynamicalSystem,
    params: KmsParams,
    scope: Scope,
    seed: u64,
}

pub fn run(cfg: &JobConfig, seed: u64) -> anyhow::Result<Outcome> {
    let sys = build_system(cfg)?;
    let p = &cfg.params;
    let params = KmsParams::new(p.lambda.clone(), p.beta, p.epsilon)?;
    let scope = Scope {
        degree: p.d,
        random_elements: p.random,
        seed,
    };
    let ctx = Ctx {
        cfg,
        sys,
        params,
        scope,
        seed,
    };

    let mut out = String::new();
    let _ = writeln!(out, "nica-kms report");
    let _ = writeln!(out, "seed: {seed}");
    let _ = writeln!(out, "algebra: {} (coordinate dimension {})", ctx.sys.algebra(), ctx.sys.algebra().dim());
    let _ = writeln!(out, "rank: {}", ctx.sys.rank());
    let _ = writeln!(
        out,
        "params: lambda = {}, beta = {}, m = {}, d = {}, epsilon = {:e}, tol = {:e}, random = {}",
        vector(&p.lambda),
        p.beta,
        p.m,
        p.d,
        p.epsilon,
        p.tol,
        p.random
    );
    let defaults = if cfg.defaults_applied.is_empty() {
        "none".to_string()
    } else {
        cfg.defaults_applied.join(", ")
    };
    let _ = writeln!(out, "defaults applied: {defaults}");
    let _ = writeln!(out, "regime: {}", ctx.params.regime());
    let _ = writeln!(out, "scope: {}", ctx.scope);
    let names: Vec<&str> = cfg.analyses.iter().map(|a| a.name()).collect();
    let _ = writeln!(out, "analyses: {}", names.join(", "));

    let mut faults = 0;
    let mut findings = 0;
    for &analysis in &cfg.analyses {
        let _ = writeln!(out, "\n== {analysis} ==");
        match run_one(&ctx, analysis) {
            Ok(section) => {
                out.push_str(&section.text);
                let _ = writeln!(out, "findings: {}", section.findings);
                let _ = writeln!(out, "status: ok");
                findings += section.findings;
            }
            Err(e) => {
                let _ = writeln!(out, "status: fault: {e:#}");
                faults += 1;
            }
        }
    }
    let _ = writeln!(out, "\n== summary ==");
    let _ = writeln!(out, "analyses: {}", cfg.analyses.len());
    let _ = writeln!(out, "faults: {faults}");
    let _ = writeln!(out, "findings: {findings}");
    Ok(Outcome {
        report: out,
        faults,
        findings,
    })
}

fn run_one(ctx: &Ctx, analysis: Analysis) -> anyhow::Result<Section> {
    match analysis {
        Analysis::Validate => validate(ctx),
        Analysis::Ideals => ideals(ctx),
        Analysis::FockCheck => fock_check(ctx),
        Analysis::KmsVerify => kms_verify(ctx),
        Analysis::KmsEval => kms_eval(ctx),
        Analysis::Descent => descent(ctx),
        Analysis::Dilate => dilation(ctx),
        Analysis::MultikmsClassify => multikms(ctx),
    }
}

fn validate(ctx: &Ctx) -> anyhow::Result<Section> {
    let mut s = Section::new();
    for (i, g) in ctx.sys.generators().iter().enumerate() {
        s.line(format!(
            "generator {}: unital *-endomorphism, certified defect {}",
            i + 1,
            sci(g.certified_defect)
        ));
    }
    s.line(format!("commutation defect: {}", sci(ctx.sys.commutation_defect)));
    let inj = classify_injectivity(&ctx.sys)?;
    s.line(format!("injective: {}", inj.injective));
    for (i, k) in inj.kernels.iter().enumerate() {
        s.line(format!("ker α_{}: {}", i + 1, k));
    }
    if let Some((g, b)) = inj.witness {
        s.line(format!("witness: α_{}(1_{}) = 0", g + 1, b + 1));
    }
    Ok(s)
}

fn ideals(ctx: &Ctx) -> anyhow::Result<Section> {
    let mut s = Section::new();
    let n = ctx.sys.rank();
    for x in Grid::new(1, n)?.iter() {
        let c = invariance_ideal(&ctx.sys, &x);
        s.line(format!(
            "I_{}: {} (base {}, stabilized after perp level {})",
            x, c.ideal, c.base, c.stabilized_at
        ));
    }
    s.line("note: the perp intersection stops once a full extra grid level changes nothing");
    Ok(s)
}

fn fock_check(ctx: &Ctx) -> anyhow::Result<Section> {
    let mut s = Section::new();
    let p = &ctx.cfg.params;
    let rep = build_representation(&ctx.sys, p.m)?;
    s.line(format!("carrier dimension: {}", rep.dim()));
    let report = match check_nica_pair(&rep, p.d) {
        Ok(r) => r,
        Err(Error::IncreaseTruncation(msg)) => {
            s.line(format!("safe subspace empty: {msg}"));
            s.findings += 1;
            return Ok(s);
        }
        Err(e) => return Err(e.into()),
    };
    for l in report.to_string().lines() {
        s.line(l);
    }
    let pass = report.passes(1e-12);
    s.line(format!("nica relations within 1e-12: {pass}"));
    if !pass {
        s.findings += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let levels: Vec<MultiIndex> = Grid::new(1.min(p.m), ctx.sys.rank())?.iter().collect();
    let coeffs: Vec<_> = levels.iter().map(|_| ctx.sys.algebra().random_element(&mut rng)).collect();
    let core = core_independence_check(&rep, &levels, &coeffs)?;
    let err = core
        .recovered
        .iter()
        .zip(&coeffs)
        .map(|(a, b)| a.dist(b))
        .fold(0.0, f64::max);
    s.line(format!(
        "core independence on {} levels: recovery error {}, peel vs solve gap {}",
        levels.len(),
        sci(err),
        sci(core.method_gap)
    ));

    for (name, tau) in traces(ctx.cfg, &ctx.sys)? {
        let state = tau.as_state(ctx.sys.algebra());
        let mut gap: f64 = 0.0;
        for f in scope_monomials(&ctx.sys, &ctx.scope)? {
            let v = vacuum_functional(&rep, &state, &MonomialSum::from(f.clone()))?;
            gap = gap.max((v - eval_kms_infinity(&tau, &f)).norm());
        }
        s.line(format!("vacuum vs KMS-infinity ({name}): max gap {}", sci(gap)));
        if gap > p.tol {
            s.findings += 1;
        }
    }
    Ok(s)
}

fn kms_verify(ctx: &Ctx) -> anyhow::Result<Section> {
    let mut s = Section::new();
    let tol = ctx.cfg.params.tol;
    if let Some(cert) = no_kms_certificate(&ctx.params, false, &ctx.sys)? {
        s.line(format!("no KMS states: {cert}"));
        s.line(format!("certificate checks: {}", cert.check()));
        s.findings += 1;
        return Ok(s);
    }
    match ctx.params.regime() {
        Regime::Positive => {
            for (name, tau) in traces(ctx.cfg, &ctx.sys)? {
                let psi = PsiTau::new(&ctx.sys, &tau, &ctx.params)?;
                let report = verify_kms(&psi, &ctx.params, &ctx.scope, tol)?;
                s.line(format!("trace {name} {}: series level {}", vector(tau.weights()), psi.level()));
                for l in report.to_string().lines() {
                    s.line(format!("  {l}"));
                }
                s.findings += report.violations.len();
                match recover_trace(&psi, &ctx.params, tol.max(ctx.params.epsilon * 10.0)) {
                    Ok(rec) => s.line(format!(
                        "  recovered trace {} from ψ(P) = {} (expected {})",
                        vector(rec.trace.weights()),
                        format_complex(rec.psi_p.value),
                        sci(rec.expected)
                    )),
                    Err(e) => {
                        s.line(format!("  recovery failed: {e}"));
                        s.findings += 1;
                    }
                }
            }
        }
        Regime::Tracial => {
            for (name, tau) in traces(ctx.cfg, &ctx.sys)? {
                let source = if ctx.sys.is_automorphic() {
                    ExtendedTrace::Automorphic(tau.clone())
                } else {
                    let dilation = dilate(&ctx.sys, ctx.cfg.params.m)?;
                    let mut w = vec![0.0; dilation.algebra().num_blocks()];
                    w[..tau.weights().len()].copy_from_slice(tau.weights());
                    let trace = TracialState::new(dilation.algebra(), w)?;
                    ExtendedTrace::Truncated { dilation, trace }
                };
                let psi = DilationTrace::new(&ctx.sys, source)?;
                let report = verify_kms(&psi, &ctx.params, &ctx.scope, tol)?;
                s.line(format!("trace {name} {} through the dilation:", vector(tau.weights())));
                for l in report.to_string().lines() {
                    s.line(format!("  {l}"));
                }
                s.findings += report.violations.len();
            }
        }
        regime => {
            s.line(format!(
                "regime {regime}: ψ_τ needs every λ_i β > 0; no functional to verify"
            ));
        }
    }
    Ok(s)
}

fn kms_eval(ctx: &Ctx) -> anyhow::Result<Section> {
    let mut s = Section::new();
    if ctx.params.regime() != Regime::Positive {
        s.line(format!("regime {}: ψ_τ is only defined for every λ_i β > 0", ctx.params.regime()));
        return Ok(s);
    }
    let n = ctx.sys.rank();
    let m = ctx.cfg.params.m;
    s.line(format!("p_m mass at m = {m}: {}", sci(pm_mass(&ctx.params, m)?)));
    s.line(format!("Π(1-e^(-β̲_i)): {}", sci(ctx.params.defect_constant())));
    let unit = ctx.sys.algebra().unit();
    for (name, tau) in traces(ctx.cfg, &ctx.sys)? {
        let psi = PsiTau::new(&ctx.sys, &tau, &ctx.params)?;
        s.line(format!("trace {name} {}: series level {}", vector(tau.weights()), psi.level()));
        let one = psi.eval(&Monomial::unit(&ctx.sys))?;
        s.line(format!("  ψ(1) = {} ± {}", format_complex(one.value), sci(one.radius)));
        for i in 0..n {
            let e = MultiIndex::unit(n, i);
            let v = psi.eval(&Monomial::new(e.clone(), unit.clone(), e))?;
            s.line(format!(
                "  ψ(V_{0} V_{0}^*) = {1} ± {2}",
                i + 1,
                format_complex(v.value),
                sci(v.radius)
            ));
        }
        let all: Vec<usize> = (0..n).collect();
        let p = psi.eval_sum(&defect_projection(&ctx.sys, &all))?;
        s.line(format!("  ψ(P) = {} ± {}", format_complex(p.value), sci(p.radius)));
        for b in 0..ctx.sys.algebra().num_blocks() {
            let v = psi.eval(&Monomial::element(n, ctx.sys.algebra().central_projection(b)))?;
            s.line(format!("  ψ(1_{}) = {} ± {}", b + 1, format_complex(v.value), sci(v.radius)));
        }
    }
    Ok(s)
}

fn descent(ctx: &Ctx) -> anyhow::Result<Section> {
    let mut s = Section::new();
    if let Some(cert) = no_kms_certificate(&ctx.params, true, &ctx.sys)? {
        s.line(format!("no KMS states on the quotient: {cert}"));
        s.line(format!("certificate checks: {}", cert.check()));
        s.findings += 1;
    }
    if ctx.params.regime() != Regime::Positive {
        s.line(format!("regime {}: descent needs every λ_i β > 0", ctx.params.regime()));
        return Ok(s);
    }
    for (name, tau) in traces(ctx.cfg, &ctx.sys)? {
        let report = cnp_descent(&ctx.sys, &tau, &ctx.params, ctx.cfg.params.tol)?;
        s.line(format!("trace {name} {}:", vector(tau.weights())));
        for l in report.to_string().lines() {
            s.line(format!("  {l}"));
        }
        if report.descends != report.vanishes {
            s.line("  weight test and defect values disagree");
            s.findings += 1;
        }
    }
    Ok(s)
}

fn dilation(ctx: &Ctx) -> anyhow::Result<Section> {
    let mut s = Section::new();
    let d = dilate(&ctx.sys, ctx.cfg.params.m)?;
    s.line(format!("level: {}", d.level()));
    s.line(format!("dilated algebra: {} (coordinate dimension {})", d.algebra(), d.algebra().dim()));
    for (x, dims) in d.summary() {
        let dims: Vec<String> = dims.iter().map(|k| k.to_string()).collect();
        s.line(format!("  A/I_{x}: blocks [{}]", dims.join(",")));
    }
    d.validated_generators()?;
    s.line("dilated generators: unital *-endomorphisms, compressions equal α, injective on interior points");
    Ok(s)
}

fn multikms(ctx: &Ctx) -> anyhow::Result<Section> {
    let mut s = Section::new();
    let betabar = ctx.params.betabar();
    if betabar.iter().any(|&b| !(b > 0.0)) {
        s.line(format!("β̲ = {} is not positive; corner sets are undefined", vector(&betabar)));
        return Ok(s);
    }
    let table = classify_prescribing_sets(&ctx.sys, &betabar, &ctx.scope, ctx.cfg.params.tol)?;
    for l in table.to_string().lines() {
        s.line(l);
    }
    Ok(s)
}
