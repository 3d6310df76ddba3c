//! Job configuration: a line-oriented format with `[section]` headers and
//! `key = value` entries. See the README for the grammar.

use std::fmt;
use std::path::PathBuf;

use num_complex::Complex64;
use thiserror::Error;

pub const DEFAULT_M: usize = 4;
pub const DEFAULT_D: usize = 2;
pub const DEFAULT_EPSILON: f64 = 1e-9;
pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_RANDOM: usize = 1;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{}, field `{field}`: {message}", location(*.line))]
pub struct ConfigError {
    /// 1-based line, 0 for command-line overrides.
    pub line: usize,
    pub field: String,
    pub message: String,
}

fn location(line: usize) -> String {
    if line == 0 {
        "command-line override".to_string()
    } else {
        format!("line {line}")
    }
}

fn err(line: usize, field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Analysis {
    Validate,
    Ideals,
    FockCheck,
    KmsVerify,
    KmsEval,
    Descent,
    Dilate,
    MultikmsClassify,
}

impl Analysis {
    pub const ALL: [Analysis; 8] = [
        Analysis::Validate,
        Analysis::Ideals,
        Analysis::FockCheck,
        Analysis::KmsVerify,
        Analysis::KmsEval,
        Analysis::Descent,
        Analysis::Dilate,
        Analysis::MultikmsClassify,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Analysis::Validate => "validate",
            Analysis::Ideals => "ideals",
            Analysis::FockCheck => "fock-check",
            Analysis::KmsVerify => "kms-verify",
            Analysis::KmsEval => "kms-eval",
            Analysis::Descent => "descent",
            Analysis::Dilate => "dilate",
            Analysis::MultikmsClassify => "multikms-classify",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }
}

impl fmt::Display for Analysis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GeneratorSpec {
    Identity,
    /// Coordinate matrix, one entry per row.
    Rows(Vec<Vec<Complex64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub lambda: Vec<f64>,
    pub beta: f64,
    pub m: usize,
    pub d: usize,
    pub epsilon: f64,
    pub tol: f64,
    /// Random elements added to the matrix-unit basis in verification scopes.
    pub random: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobConfig {
    pub blocks: Vec<usize>,
    pub n: usize,
    pub generators: Vec<GeneratorSpec>,
    pub analyses: Vec<Analysis>,
    pub params: Params,
    /// Parameters that were not given and took their default.
    pub defaults_applied: Vec<&'static str>,
    pub traces: Vec<(String, Vec<f64>)>,
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
struct Entry {
    key: String,
    value: String,
    line: usize,
}

#[derive(Debug, Clone)]
struct Section {
    name: String,
    line: usize,
    entries: Vec<Entry>,
}

fn split_sections(text: &str) -> Result<Vec<Section>, ConfigError> {
    let mut sections: Vec<Section> = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| err(line, content, "section header is missing `]`"))?;
            let name = name.split_whitespace().collect::<Vec<_>>().join(" ");
            if sections.iter().any(|s| s.name == name) {
                return Err(err(line, &name, "section appears twice"));
            }
            sections.push(Section {
                name,
                line,
                entries: Vec::new(),
            });
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(line, content, "expected `key = value`"))?;
        let section = sections
            .last_mut()
            .ok_or_else(|| err(line, key.trim(), "entry before any section header"))?;
        section.entries.push(Entry {
            key: key.trim().to_string(),
            value: value.trim().to_string(),
            line,
        });
    }
    Ok(sections)
}

/// `section.key=value`; replaces every entry with that key.
fn apply_override(sections: &mut Vec<Section>, item: &str) -> Result<(), ConfigError> {
    let (path, value) = item
        .split_once('=')
        .ok_or_else(|| err(0, item, "expected `section.key=value`"))?;
    let (section, key) = path
        .trim()
        .rsplit_once('.')
        .ok_or_else(|| err(0, path, "expected `section.key`"))?;
    let section = section.replace('.', " ");
    let entry = Entry {
        key: key.to_string(),
        value: value.trim().to_string(),
        line: 0,
    };
    match sections.iter_mut().find(|s| s.name == section) {
        Some(s) => {
            s.entries.retain(|e| e.key != key);
            s.entries.push(entry);
        }
        None => sections.push(Section {
            name: section,
            line: 0,
            entries: vec![entry],
        }),
    }
    Ok(())
}

fn parse_usize(e: &Entry) -> Result<usize, ConfigError> {
    e.value
        .parse()
        .map_err(|_| err(e.line, &e.key, format!("`{}` is not a non-negative integer", e.value)))
}

fn parse_f64(e: &Entry) -> Result<f64, ConfigError> {
    e.value
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| err(e.line, &e.key, format!("`{}` is not a finite number", e.value)))
}

fn parse_list<T>(e: &Entry, item: impl Fn(&str) -> Option<T>) -> Result<Vec<T>, ConfigError> {
    e.value
        .split(',')
        .map(|s| {
            let s = s.trim();
            item(s).ok_or_else(|| err(e.line, &e.key, format!("cannot read `{s}`")))
        })
        .collect()
}

/// Reads `re`, `imi`, or `re+imi` / `re-imi`, with `i` alone meaning 1.
pub fn parse_complex(s: &str) -> Option<Complex64> {
    let s = s.trim();
    if s.is_empty() {
        return None;
    }
    let body = match s.strip_suffix('i') {
        None => return s.parse::<f64>().ok().filter(|v| v.is_finite()).map(|re| Complex64::new(re, 0.0)),
        Some(body) => body,
    };
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&k| (bytes[k] == b'+' || bytes[k] == b'-') && !matches!(bytes[k - 1], b'e' | b'E'));
    let imag = |t: &str| -> Option<f64> {
        match t {
            "" | "+" => Some(1.0),
            "-" => Some(-1.0),
            _ => t.parse::<f64>().ok().filter(|v| v.is_finite()),
        }
    };
    match split {
        Some(k) => {
            let re = body[..k].parse::<f64>().ok().filter(|v| v.is_finite())?;
            Some(Complex64::new(re, imag(&body[k..])?))
        }
        None => Some(Complex64::new(0.0, imag(body)?)),
    }
}

fn reject_unknown(section: &Section, known: &[&str]) -> Result<(), ConfigError> {
    match section.entries.iter().find(|e| !known.contains(&e.key.as_str())) {
        Some(e) => Err(err(
            e.line,
            &e.key,
            format!("unknown key in [{}]; expected one of {}", section.name, known.join(", ")),
        )),
        None => Ok(()),
    }
}

fn single<'a>(section: &'a Section, key: &str) -> Result<Option<&'a Entry>, ConfigError> {
    let mut hits = section.entries.iter().filter(|e| e.key == key);
    let first = hits.next();
    if let Some(dup) = hits.next() {
        return Err(err(dup.line, key, "given more than once"));
    }
    Ok(first)
}

pub fn parse_config(text: &str, overrides: &[String]) -> Result<JobConfig, ConfigError> {
    let mut sections = split_sections(text)?;
    for o in overrides {
        apply_override(&mut sections, o)?;
    }
    let find = |name: &str| sections.iter().find(|s| s.name == name);

    let algebra = find("algebra").ok_or_else(|| err(0, "algebra", "missing [algebra] section"))?;
    reject_unknown(algebra, &["blocks"])?;
    let blocks_entry =
        single(algebra, "blocks")?.ok_or_else(|| err(algebra.line, "blocks", "missing block dimensions"))?;
    let blocks = parse_list(blocks_entry, |s| s.parse::<usize>().ok().filter(|&d| d > 0))?;

    let system = find("system").ok_or_else(|| err(0, "system", "missing [system] section"))?;
    reject_unknown(system, &["n"])?;
    let n_entry = single(system, "n")?.ok_or_else(|| err(system.line, "n", "missing rank n"))?;
    let n = parse_usize(n_entry)?;
    if n == 0 {
        return Err(err(n_entry.line, "n", "rank must be at least 1"));
    }

    let coord_dim: usize = blocks.iter().map(|d| d * d).sum();
    let mut generators = Vec::with_capacity(n);
    for i in 1..=n {
        let name = format!("generator {i}");
        let section = find(&name).ok_or_else(|| err(0, &name, format!("missing [{name}] section")))?;
        reject_unknown(section, &["row", "identity"])?;
        let identity = single(section, "identity")?;
        let rows: Vec<&Entry> = section.entries.iter().filter(|e| e.key == "row").collect();
        let generator = match (identity, rows.is_empty()) {
            (Some(e), true) => match e.value.as_str() {
                "true" | "yes" => GeneratorSpec::Identity,
                _ => return Err(err(e.line, "identity", "expected `true` or `yes`")),
            },
            (Some(e), false) => return Err(err(e.line, "identity", "cannot be combined with rows")),
            (None, _) => {
                if rows.len() != coord_dim {
                    return Err(err(
                        section.line,
                        "row",
                        format!("[{name}] has {} rows, the algebra needs {coord_dim}", rows.len()),
                    ));
                }
                let mut matrix = Vec::with_capacity(coord_dim);
                for r in rows {
                    let row = parse_list(r, parse_complex)?;
                    if row.len() != coord_dim {
                        return Err(err(
                            r.line,
                            "row",
                            format!("matrix row has {} entries, expected {coord_dim}", row.len()),
                        ));
                    }
                    matrix.push(row);
                }
                GeneratorSpec::Rows(matrix)
            }
        };
        generators.push(generator);
    }
    if let Some(extra) = sections.iter().find(|s| {
        s.name
            .strip_prefix("generator ")
            .and_then(|k| k.parse::<usize>().ok())
            .is_some_and(|k| k == 0 || k > n)
    }) {
        return Err(err(extra.line, &extra.name, format!("rank is {n}; no such generator")));
    }

    let mut defaults_applied = Vec::new();
    let empty = Section {
        name: "params".into(),
        line: 0,
        entries: Vec::new(),
    };
    let params_section = find("params").unwrap_or(&empty);
    reject_unknown(params_section, &["lambda", "beta", "m", "d", "epsilon", "tol", "random"])?;
    let lambda = match single(params_section, "lambda")? {
        Some(e) => {
            let l = parse_list(e, |s| s.parse::<f64>().ok().filter(|v| v.is_finite()))?;
            if l.len() != n {
                return Err(err(e.line, "lambda", format!("needs {n} entries, got {}", l.len())));
            }
            l
        }
        None => {
            defaults_applied.push("lambda");
            vec![1.0; n]
        }
    };
    let beta = match single(params_section, "beta")? {
        Some(e) => parse_f64(e)?,
        None => {
            defaults_applied.push("beta");
            1.0
        }
    };
    let mut usize_param = |key: &'static str, default: usize| -> Result<usize, ConfigError> {
        match single(params_section, key)? {
            Some(e) => parse_usize(e),
            None => {
                defaults_applied.push(key);
                Ok(default)
            }
        }
    };
    let m = usize_param("m", DEFAULT_M)?;
    let d = usize_param("d", DEFAULT_D)?;
    let random = usize_param("random", DEFAULT_RANDOM)?;
    if m == 0 {
        return Err(err(0, "m", "truncation level must be at least 1"));
    }
    let mut positive = |key: &'static str, default: f64| -> Result<f64, ConfigError> {
        match single(params_section, key)? {
            Some(e) => {
                let v = parse_f64(e)?;
                if v > 0.0 {
                    Ok(v)
                } else {
                    Err(err(e.line, key, "tolerances must be positive"))
                }
            }
            None => {
                defaults_applied.push(key);
                Ok(default)
            }
        }
    };
    let epsilon = positive("epsilon", DEFAULT_EPSILON)?;
    let tol = positive("tol", DEFAULT_TOL)?;

    let mut traces = Vec::new();
    if let Some(section) = find("traces") {
        for e in &section.entries {
            if traces.iter().any(|(name, _)| name == &e.key) {
                return Err(err(e.line, &e.key, "trace named twice"));
            }
            let w = parse_list(e, |s| s.parse::<f64>().ok().filter(|v| v.is_finite() && *v >= 0.0))?;
            if w.len() != blocks.len() {
                return Err(err(
                    e.line,
                    &e.key,
                    format!("needs one weight per block ({}), got {}", blocks.len(), w.len()),
                ));
            }
            if !(w.iter().sum::<f64>() > 0.0) {
                return Err(err(e.line, &e.key, "weights have no mass"));
            }
            traces.push((e.key.clone(), w));
        }
    }

    let run = find("run").ok_or_else(|| err(0, "run", "missing [run] section"))?;
    reject_unknown(run, &["analyses", "output", "seed"])?;
    let analyses_entry =
        single(run, "analyses")?.ok_or_else(|| err(run.line, "analyses", "no analyses requested"))?;
    let analyses = parse_list(analyses_entry, Analysis::parse)?;
    let output = single(run, "output")?.map(|e| PathBuf::from(&e.value));
    let seed = match single(run, "seed")? {
        Some(e) => Some(
            e.value
                .parse::<u64>()
                .map_err(|_| err(e.line, "seed", "expected a non-negative integer"))?,
        ),
        None => None,
    };

    for s in &sections {
        let known = matches!(s.name.as_str(), "algebra" | "system" | "params" | "traces" | "run")
            || s.name.starts_with("generator ");
        if !known {
            return Err(err(s.line, &s.name, "unknown section"));
        }
    }

    Ok(JobConfig {
        blocks,
        n,
        generators,
        analyses,
        params: Params {
            lambda,
            beta,
            m,
            d,
            epsilon,
            tol,
            random,
        },
        defaults_applied,
        traces,
        output,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
[algebra]
blocks = 1

[system]
n = 2

[generator 1]
identity = true

[generator 2]
identity = true

[params]
lambda = 1, 1
beta = 1

[run]
analyses = kms-verify
";

    #[test]
    fn complex_numbers() {
        let c = |re, im| Some(Complex64::new(re, im));
        assert_eq!(parse_complex("1"), c(1.0, 0.0));
        assert_eq!(parse_complex("-2.5"), c(-2.5, 0.0));
        assert_eq!(parse_complex("1+2i"), c(1.0, 2.0));
        assert_eq!(parse_complex("1.5e-3-2e-1i"), c(1.5e-3, -0.2));
        assert_eq!(parse_complex("i"), c(0.0, 1.0));
        assert_eq!(parse_complex("-i"), c(0.0, -1.0));
        assert_eq!(parse_complex("3-i"), c(3.0, -1.0));
        assert_eq!(parse_complex("1e+2+1e-2i"), c(100.0, 0.01));
        assert_eq!(parse_complex("abc"), None);
        assert_eq!(parse_complex("1+xi"), None);
    }

    #[test]
    fn minimal_config_with_defaults() {
        let cfg = parse_config(MINIMAL, &[]).unwrap();
        assert_eq!(cfg.n, 2);
        assert_eq!(cfg.generators, vec![GeneratorSpec::Identity; 2]);
        assert_eq!(cfg.params.m, DEFAULT_M);
        assert_eq!(cfg.params.d, DEFAULT_D);
        assert_eq!(cfg.defaults_applied, vec!["m", "d", "random", "epsilon", "tol"]);
        assert_eq!(cfg.analyses, vec![Analysis::KmsVerify]);
    }

    #[test]
    fn overrides() {
        let cfg = parse_config(MINIMAL, &["params.beta=2".into(), "params.d=1".into()]).unwrap();
        assert_eq!(cfg.params.beta, 2.0);
        assert_eq!(cfg.params.d, 1);
        assert!(!cfg.defaults_applied.contains(&"d"));
        let e = parse_config(MINIMAL, &["params.gamma=2".into()]).unwrap_err();
        assert_eq!(e.line, 0);
        assert_eq!(e.field, "gamma");
    }

    #[test]
    fn diagnostics_name_the_line() {
        let bad = MINIMAL.replace("beta = 1", "beta = one");
        let e = parse_config(&bad, &[]).unwrap_err();
        assert_eq!((e.line, e.field.as_str()), (15, "beta"));

        let unknown = MINIMAL.replace("beta = 1", "temperature = 1");
        assert_eq!(parse_config(&unknown, &[]).unwrap_err().field, "temperature");

        let rows = "[algebra]\nblocks = 1, 1\n[system]\nn = 1\n[generator 1]\nrow = 1, 0\nrow = 1\n[run]\nanalyses = validate\n";
        let e = parse_config(rows, &[]).unwrap_err();
        assert_eq!(e.line, 7);
        assert!(e.to_string().contains("line 7"));

        let tol = MINIMAL.replace("beta = 1", "beta = 1\ntol = -1");
        assert_eq!(parse_config(&tol, &[]).unwrap_err().field, "tol");

        let analysis = MINIMAL.replace("kms-verify", "kms-verify, plot");
        assert_eq!(parse_config(&analysis, &[]).unwrap_err().field, "analyses");
    }

    #[test]
    fn generator_rows_and_traces() {
        let text = "\
[algebra]
blocks = 1, 1
[system]
n = 1
[generator 1]
row = 1, 0
row = 1+0i, 0
[traces]
left = 1, 0
mixed = 0.25, 0.75
[run]
analyses = validate, descent
seed = 9
";
        let cfg = parse_config(text, &[]).unwrap();
        match &cfg.generators[0] {
            GeneratorSpec::Rows(r) => assert_eq!(r[1][0], Complex64::new(1.0, 0.0)),
            other => panic!("{other:?}"),
        }
        assert_eq!(cfg.traces.len(), 2);
        assert_eq!(cfg.seed, Some(9));
        assert!(parse_config(&text.replace("mixed = 0.25, 0.75", "mixed = 1"), &[]).is_err());
        assert!(parse_config(&text.replace("n = 1", "n = 1\n[generator 2]\nidentity = true"), &[]).is_err());
    }
}
