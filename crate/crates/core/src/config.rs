//! Market description files.
//!
//! ```text
//! # comment
//! [seller]
//! support = [1, 10]
//! dist = uniform          # or power, with power_k = <number>
//! gamma = "lam"
//!
//! [buyer]
//! support = [1, 10]
//! dist = uniform
//! gamma = "0.5*lam"
//!
//! [kernels]
//! R_S = "0.5*lam*x"       # or M_S / M_B in (r, lam)
//! R_B = "0.5*lam*(x-0.5)"
//!
//! [options]               # optional
//! objective = revenue
//! grid_n = 512
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::expr::{Expr, ExprSignature};
use crate::market::{
    gamma_signature, kernel_signature, monetary_signature, DistKind, MarketSpec, Primitives, SideId, SideSpec,
    TypeDistribution,
};
use crate::mechanism::Objective;
use crate::numerics::Tolerances;

#[derive(Debug, Clone, PartialEq)]
enum Value {
    Str(String),
    List(Vec<f64>),
    Word(String),
}

impl Value {
    fn describe(&self) -> &'static str {
        match self {
            Value::Str(_) => "a quoted string",
            Value::List(_) => "a list",
            Value::Word(_) => "a bare value",
        }
    }
}

#[derive(Debug, Clone)]
struct Entry {
    value: Value,
    line: usize,
    /// 1-based column of the key.
    column: usize,
    /// 1-based column of the first character of the value.
    value_column: usize,
}

#[derive(Debug, Default)]
struct Section {
    line: usize,
    entries: BTreeMap<String, Entry>,
}

/// Overrides read from the `[options]` section.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FileOptions {
    pub objective: Option<Objective>,
    pub grid_n: Option<usize>,
    pub quad_abs: Option<f64>,
    pub quad_rel: Option<f64>,
    pub root_x: Option<f64>,
    pub max_depth: Option<usize>,
    pub seed: Option<u64>,
    pub n_sellers: Option<usize>,
    pub n_buyers: Option<usize>,
}

impl FileOptions {
    /// `base` with any tolerance overrides applied.
    pub fn tolerances(&self, base: Tolerances) -> Tolerances {
        Tolerances {
            quad_abs: self.quad_abs.unwrap_or(base.quad_abs),
            quad_rel: self.quad_rel.unwrap_or(base.quad_rel),
            root_x: self.root_x.unwrap_or(base.root_x),
            max_depth: self.max_depth.unwrap_or(base.max_depth),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MarketFile {
    pub spec: MarketSpec,
    pub options: FileOptions,
}

struct Ctx<'a> {
    path: &'a str,
}

impl Ctx<'_> {
    fn err(&self, line: usize, column: usize, message: impl Into<String>) -> Error {
        Error::Config { path: self.path.to_string(), line, column, message: message.into() }
    }
}

/// Strips a `#` comment that is not inside a quoted string.
fn strip_comment(line: &str) -> &str {
    let mut quoted = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => quoted = !quoted,
            '#' if !quoted => return &line[..i],
            _ => {}
        }
    }
    line
}

fn col(line: &str, byte: usize) -> usize {
    line[..byte].chars().count() + 1
}

fn parse_value(ctx: &Ctx<'_>, raw: &str, line_no: usize, column: usize) -> Result<Value> {
    let v = raw.trim();
    if v.is_empty() {
        return Err(ctx.err(line_no, column, "missing value"));
    }
    if let Some(rest) = v.strip_prefix('"') {
        let Some(end) = rest.find('"') else {
            return Err(ctx.err(line_no, column, "unterminated string"));
        };
        if !rest[end + 1..].trim().is_empty() {
            return Err(ctx.err(line_no, column + end + 2, "unexpected text after string"));
        }
        return Ok(Value::Str(rest[..end].to_string()));
    }
    if let Some(rest) = v.strip_prefix('[') {
        let Some(body) = rest.strip_suffix(']') else {
            return Err(ctx.err(line_no, column, "list must end with `]`"));
        };
        let mut items = Vec::new();
        let mut offset = 1;
        for part in body.split(',') {
            let trimmed = part.trim();
            let lead = part.len() - part.trim_start().len();
            let n: f64 = trimmed
                .parse()
                .map_err(|_| ctx.err(line_no, column + offset + lead, format!("expected a number, found `{trimmed}`")))?;
            items.push(n);
            offset += part.len() + 1;
        }
        return Ok(Value::List(items));
    }
    if v.contains(char::is_whitespace) {
        return Err(ctx.err(line_no, column, format!("unexpected whitespace in value `{v}`")));
    }
    Ok(Value::Word(v.to_string()))
}

fn parse_sections(ctx: &Ctx<'_>, text: &str) -> Result<BTreeMap<String, Section>> {
    let mut sections: BTreeMap<String, Section> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (idx, full) in text.lines().enumerate() {
        let line_no = idx + 1;
        let body = strip_comment(full);
        let trimmed = body.trim();
        if trimmed.is_empty() {
            continue;
        }
        let lead = body.len() - body.trim_start().len();
        if let Some(rest) = trimmed.strip_prefix('[') {
            let Some(name) = rest.strip_suffix(']') else {
                return Err(ctx.err(line_no, col(full, lead), "section header must end with `]`"));
            };
            let name = name.trim().to_string();
            if !matches!(name.as_str(), "seller" | "buyer" | "kernels" | "options") {
                return Err(ctx.err(line_no, col(full, lead), format!("unknown section [{name}]")));
            }
            if sections.contains_key(&name) {
                return Err(ctx.err(line_no, col(full, lead), format!("duplicate section [{name}]")));
            }
            sections.insert(name.clone(), Section { line: line_no, ..Default::default() });
            current = Some(name);
            continue;
        }
        let Some(eq) = body.find('=') else {
            return Err(ctx.err(line_no, col(full, lead), "expected `key = value`"));
        };
        let key = body[..eq].trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(ctx.err(line_no, col(full, lead), format!("invalid key `{key}`")));
        }
        let Some(section) = current.as_ref() else {
            return Err(ctx.err(line_no, col(full, lead), format!("key `{key}` appears before any section")));
        };
        let raw = &body[eq + 1..];
        let vlead = raw.len() - raw.trim_start().len();
        let value_column = col(full, eq + 1 + vlead);
        let value = parse_value(ctx, raw, line_no, value_column)?;
        let sec = sections.get_mut(section).expect("section exists");
        let entry = Entry { value, line: line_no, column: col(full, lead), value_column };
        if sec.entries.insert(key.to_string(), entry).is_some() {
            return Err(ctx.err(line_no, col(full, lead), format!("duplicate key `{key}` in [{section}]")));
        }
    }
    Ok(sections)
}

struct Reader<'a> {
    ctx: &'a Ctx<'a>,
    name: &'a str,
    section: Section,
}

impl<'a> Reader<'a> {
    fn take(&mut self, key: &str) -> Option<Entry> {
        self.section.entries.remove(key)
    }

    fn require(&mut self, key: &str) -> Result<Entry> {
        self.take(key).ok_or_else(|| {
            self.ctx.err(self.section.line, 1, format!("section [{}] is missing key `{key}`", self.name))
        })
    }

    fn string(&self, key: &str, e: &Entry) -> Result<String> {
        match &e.value {
            Value::Str(s) => Ok(s.clone()),
            other => Err(self.ctx.err(e.line, e.value_column, format!("`{key}` must be a quoted string, found {}", other.describe()))),
        }
    }

    fn word(&self, key: &str, e: &Entry) -> Result<String> {
        match &e.value {
            Value::Word(s) => Ok(s.clone()),
            Value::Str(s) => Ok(s.clone()),
            other => Err(self.ctx.err(e.line, e.value_column, format!("`{key}` must be a single value, found {}", other.describe()))),
        }
    }

    fn number<T: std::str::FromStr>(&self, key: &str, e: &Entry) -> Result<T> {
        let w = self.word(key, e)?;
        w.parse().map_err(|_| self.ctx.err(e.line, e.value_column, format!("`{key}` has invalid value `{w}`")))
    }

    fn expr(&self, key: &str, e: &Entry, sig: &ExprSignature) -> Result<Expr> {
        let src = self.string(key, e)?;
        Expr::parse(&src, sig).map_err(|pe| {
            let offset = pe.offset().min(src.len());
            let column = e.value_column + 1 + src[..offset].chars().count();
            self.ctx.err(e.line, column, format!("`{key}`: {pe}"))
        })
    }

    /// Rejects keys that were not consumed.
    fn finish(self) -> Result<()> {
        if let Some((k, e)) = self.section.entries.iter().next() {
            return Err(self.ctx.err(e.line, e.column, format!("unknown key `{k}` in [{}]", self.name)));
        }
        Ok(())
    }
}

fn reader<'a>(ctx: &'a Ctx<'a>, sections: &mut BTreeMap<String, Section>, name: &'a str) -> Result<Reader<'a>> {
    let section = sections.remove(name).ok_or_else(|| Error::Schema(format!("{}: missing section [{name}]", ctx.path)))?;
    Ok(Reader { ctx, name, section })
}

fn side_spec(ctx: &Ctx<'_>, sections: &mut BTreeMap<String, Section>, side: SideId) -> Result<SideSpec> {
    let mut r = reader(ctx, sections, side.name())?;
    let support = r.require("support")?;
    let (lo, hi) = match &support.value {
        Value::List(v) if v.len() == 2 => (v[0], v[1]),
        _ => return Err(ctx.err(support.line, support.value_column, "`support` must be a list `[lo, hi]`")),
    };
    let dist_entry = r.require("dist")?;
    let dist_name = r.word("dist", &dist_entry)?;
    let power_k = r.take("power_k");
    let kind = match dist_name.as_str() {
        "uniform" => {
            if let Some(e) = power_k {
                return Err(ctx.err(e.line, e.column, "`power_k` only applies to `dist = power`"));
            }
            DistKind::Uniform
        }
        "power" => {
            let e = power_k.ok_or_else(|| ctx.err(dist_entry.line, dist_entry.column, "`dist = power` requires `power_k`"))?;
            DistKind::Power { k: r.number("power_k", &e)? }
        }
        other => {
            return Err(ctx.err(
                dist_entry.line,
                dist_entry.value_column,
                format!("unknown distribution `{other}` (expected uniform or power)"),
            ))
        }
    };
    let dist = TypeDistribution::new(kind, lo, hi).map_err(|e| ctx.err(support.line, support.value_column, e.to_string()))?;
    let gamma_entry = r.require("gamma")?;
    let gamma = r.expr("gamma", &gamma_entry, &gamma_signature())?;
    r.finish()?;
    Ok(SideSpec { dist, gamma })
}

fn options(ctx: &Ctx<'_>, sections: &mut BTreeMap<String, Section>) -> Result<FileOptions> {
    if !sections.contains_key("options") {
        return Ok(FileOptions::default());
    }
    let mut r = reader(ctx, sections, "options")?;
    let mut o = FileOptions::default();
    if let Some(e) = r.take("objective") {
        let w = r.word("objective", &e)?;
        o.objective = Some(w.parse().map_err(|_| ctx.err(e.line, e.value_column, format!("unknown objective `{w}`")))?);
    }
    macro_rules! opt {
        ($field:ident) => {
            if let Some(e) = r.take(stringify!($field)) {
                o.$field = Some(r.number(stringify!($field), &e)?);
            }
        };
    }
    opt!(grid_n);
    opt!(quad_abs);
    opt!(quad_rel);
    opt!(root_x);
    opt!(max_depth);
    opt!(seed);
    opt!(n_sellers);
    opt!(n_buyers);
    r.finish()?;
    Ok(o)
}

/// Parses and validates a market description. `path` labels diagnostics.
pub fn parse_market(text: &str, path: &str) -> Result<MarketFile> {
    let ctx = Ctx { path };
    let mut sections = parse_sections(&ctx, text)?;
    let seller = side_spec(&ctx, &mut sections, SideId::Seller)?;
    let buyer = side_spec(&ctx, &mut sections, SideId::Buyer)?;

    let mut k = reader(&ctx, &mut sections, "kernels")?;
    let direct = (k.take("R_S"), k.take("R_B"));
    let monetary = (k.take("M_S"), k.take("M_B"));
    let spec = match (direct, monetary) {
        ((Some(rs), Some(rb)), (None, None)) => {
            let sig = kernel_signature();
            let (rs, rb) = (k.expr("R_S", &rs, &sig)?, k.expr("R_B", &rb, &sig)?);
            k.finish()?;
            MarketSpec::with_direct_kernels(seller, buyer, rs, rb)?
        }
        ((None, None), (Some(ms), Some(mb))) => {
            let sig = monetary_signature();
            let prim = Primitives { m_seller: k.expr("M_S", &ms, &sig)?, m_buyer: k.expr("M_B", &mb, &sig)? };
            k.finish()?;
            MarketSpec::with_primitives(seller, buyer, prim)?
        }
        _ => {
            return Err(Error::Schema(format!(
                "{path}: [kernels] needs either both R_S and R_B or both M_S and M_B"
            )))
        }
    };
    let options = options(&ctx, &mut sections)?;

    let report = spec.validate(64)?;
    if let Some(v) = report.violations.first() {
        return Err(Error::Schema(format!("{path}: market validation failed: {v}")));
    }
    Ok(MarketFile { spec, options })
}

pub fn load_market(path: &Path) -> Result<MarketFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_market(&text, &path.display().to_string())
}

/// The bundled reference market file.
pub const REFERENCE_MARKET: &str = include_str!("../configs/reference.market");
