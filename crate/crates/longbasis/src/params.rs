//! Parameter CSV: `param,index,value`. Vectors indexed by age or year use
//! that age or year as the index; scalars use index 0. Numbers are written in
//! the shortest form that reads back to the same `f64`.

use std::io::{Read, Write};

use longbasis_core::alt::ZhouStyleParams;
use longbasis_core::book::{BookFamily, BookModelFit, BookParams};
use longbasis_core::cohort::{CohortIndex, MIN_COHORT_CELLS};
use longbasis_core::error::{Error, Result};
use longbasis_core::jump::JumpDiffusionParams;
use longbasis_core::lc::LcParams;
use longbasis_core::renewal::RenewalFamily;
use longbasis_core::Span;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamTable {
    pub rows: Vec<(String, i64, String)>,
}

fn missing(name: &str) -> Error {
    Error::InvalidParameter(format!("parameter {name:?} missing"))
}

impl ParamTable {
    pub fn push(&mut self, name: &str, index: i64, value: impl ToString) {
        self.rows.push((name.to_string(), index, value.to_string()));
    }

    pub fn push_series(&mut self, name: &str, first: i32, values: &[f64]) {
        for (i, v) in values.iter().enumerate() {
            self.push(name, first as i64 + i as i64, v);
        }
    }

    pub fn text(&self, name: &str) -> Result<&str> {
        self.rows.iter().find(|r| r.0 == name).map(|r| r.2.as_str()).ok_or_else(|| missing(name))
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        let t = self.text(name)?;
        t.parse().map_err(|_| Error::InvalidParameter(format!("{name} = {t:?} is not a number")))
    }

    /// Entries of a vector parameter; indices must be contiguous.
    pub fn series(&self, name: &str) -> Result<(Span, Vec<f64>)> {
        let mut entries: Vec<(i64, f64)> = self
            .rows
            .iter()
            .filter(|r| r.0 == name)
            .map(|r| r.2.parse().map(|v| (r.1, v)).map_err(|_| Error::InvalidParameter(format!("{name}[{}] = {:?}", r.1, r.2))))
            .collect::<Result<_>>()?;
        if entries.is_empty() {
            return Err(missing(name));
        }
        entries.sort_by_key(|e| e.0);
        let first = entries[0].0;
        if entries.iter().enumerate().any(|(i, e)| e.0 != first + i as i64) {
            return Err(Error::InvalidParameter(format!("indices of {name} are not contiguous")));
        }
        let span = Span { first: first as i32, last: (first + entries.len() as i64 - 1) as i32 };
        Ok((span, entries.into_iter().map(|e| e.1).collect()))
    }

    pub fn read<R: Read>(source: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| Error::MalformedRow { line: 1, reason: e.to_string() })?
            .iter()
            .map(str::to_string)
            .collect();
        if header != ["param", "index", "value"] {
            return Err(Error::MalformedRow { line: 1, reason: "expected header param,index,value".into() });
        }
        let mut table = ParamTable::default();
        for record in reader.records() {
            let record = record.map_err(|e| Error::MalformedRow {
                line: e.position().map_or(0, |p| p.line() as usize),
                reason: e.to_string(),
            })?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            let index = record[1].parse().map_err(|_| Error::MalformedRow { line, reason: format!("index {:?}", &record[1]) })?;
            table.rows.push((record[0].to_string(), index, record[2].to_string()));
        }
        Ok(table)
    }

    pub fn write<W: Write>(&self, sink: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["param", "index", "value"])?;
        for (p, i, v) in &self.rows {
            w.write_record([p.as_str(), &i.to_string(), v.as_str()])?;
        }
        w.flush()
    }
}

pub fn lc_to_table(p: &LcParams) -> ParamTable {
    let mut t = ParamTable::default();
    t.push_series("a", p.ages.first, &p.a);
    t.push_series("b", p.ages.first, &p.b);
    t.push_series("k", p.years.first, &p.k);
    t
}

pub fn lc_from_table(t: &ParamTable) -> Result<LcParams> {
    let (ages, a) = t.series("a")?;
    let (ages_b, b) = t.series("b")?;
    if ages != ages_b {
        return Err(Error::DimensionMismatch("a and b cover different ages".into()));
    }
    // Published age effects come without an index; allow an absent k.
    let (years, k) = t.series("k").unwrap_or((Span { first: 0, last: -1 }, Vec::new()));
    Ok(LcParams { ages, years, a, b, k })
}

pub fn jump_to_table(p: &JumpDiffusionParams, family: RenewalFamily) -> ParamTable {
    let mut t = ParamTable::default();
    t.push("family", 0, family.name());
    for (name, v) in [("mu", p.mu), ("sigma", p.sigma), ("eta", p.eta), ("alpha", p.alpha), ("beta", p.beta), ("k0", p.k0)] {
        t.push(name, 0, v);
    }
    t
}

pub fn jump_from_table(t: &ParamTable) -> Result<(JumpDiffusionParams, RenewalFamily)> {
    let family = t.text("family").map_or(Ok(RenewalFamily::Gamma), str::parse)?;
    let p = JumpDiffusionParams {
        mu: t.scalar("mu")?,
        sigma: t.scalar("sigma")?,
        eta: t.scalar("eta")?,
        alpha: t.scalar("alpha")?,
        beta: t.scalar("beta")?,
        k0: t.scalar("k0").unwrap_or(0.0),
    };
    p.validate()?;
    Ok((p, family))
}

pub fn book_to_table(fit: &BookModelFit) -> ParamTable {
    let mut t = ParamTable::default();
    t.push("family", 0, fit.family.name());
    let (x0, t0) = (fit.ages.first, fit.years.first);
    match &fit.params {
        BookParams::RelLc { a, b, k } => {
            t.push_series("a", x0, a);
            t.push_series("b", x0, b);
            t.push_series("k", t0, k);
        }
        BookParams::Cae { a, k, b_ref } => {
            t.push_series("a", x0, a);
            t.push_series("b_ref", x0, b_ref);
            t.push_series("k", t0, k);
        }
        BookParams::Apc { a, k, gamma, cohorts } => {
            t.push_series("a", x0, a);
            t.push_series("k", t0, k);
            for (g, anchor) in gamma.iter().zip(&cohorts.anchors) {
                t.push("gamma", *anchor as i64, g);
            }
        }
        BookParams::Cbd { kappa1, kappa2, xbar } => {
            t.push_series("kappa1", t0, kappa1);
            t.push_series("kappa2", t0, kappa2);
            t.push("xbar", 0, xbar);
            t.push("age_first", 0, fit.ages.first);
            t.push("age_last", 0, fit.ages.last);
        }
    }
    t.push("loglik", 0, fit.loglik);
    t.push("n_params", 0, fit.n_params);
    t.push("n_obs", 0, fit.n_obs);
    t.push("bic", 0, fit.bic);
    t
}

pub fn book_from_table(t: &ParamTable) -> Result<BookModelFit> {
    let family: BookFamily = t.text("family")?.parse()?;
    let (ages, years, params) = match family {
        BookFamily::RelLc => {
            let ((ages, a), (_, b), (years, k)) = (t.series("a")?, t.series("b")?, t.series("k")?);
            (ages, years, BookParams::RelLc { a, b, k })
        }
        BookFamily::Cae => {
            let ((ages, a), (_, b_ref), (years, k)) = (t.series("a")?, t.series("b_ref")?, t.series("k")?);
            (ages, years, BookParams::Cae { a, k, b_ref })
        }
        BookFamily::Apc => {
            let ((ages, a), (years, k)) = (t.series("a")?, t.series("k")?);
            let cohorts = CohortIndex::new(ages, years, MIN_COHORT_CELLS);
            let gamma: Vec<f64> = cohorts
                .anchors
                .iter()
                .map(|c| {
                    t.rows
                        .iter()
                        .find(|r| r.0 == "gamma" && r.1 == *c as i64)
                        .and_then(|r| r.2.parse().ok())
                        .ok_or_else(|| missing("gamma"))
                })
                .collect::<Result<_>>()?;
            (ages, years, BookParams::Apc { a, k, gamma, cohorts })
        }
        BookFamily::Cbd => {
            let ((years, kappa1), (_, kappa2)) = (t.series("kappa1")?, t.series("kappa2")?);
            let ages = Span { first: t.scalar("age_first")? as i32, last: t.scalar("age_last")? as i32 };
            (ages, years, BookParams::Cbd { kappa1, kappa2, xbar: t.scalar("xbar")? })
        }
    };
    Ok(BookModelFit {
        family,
        ages,
        years,
        params,
        loglik: t.scalar("loglik").unwrap_or(f64::NAN),
        n_params: t.scalar("n_params").map_or(0, |v| v as usize),
        n_obs: t.scalar("n_obs").map_or(0, |v| v as usize),
        bic: t.scalar("bic").unwrap_or(f64::NAN),
    })
}

pub fn zhou_to_table(p: &ZhouStyleParams) -> ParamTable {
    let mut t = ParamTable::default();
    t.push_series("a1", p.ages1.first, &p.a1);
    t.push_series("b1", p.ages1.first, &p.b1);
    t.push_series("a2", p.ages2.first, &p.a2);
    t.push_series("b2", p.ages2.first, &p.b2);
    for (name, v) in [
        ("mu_k", p.mu_k),
        ("v_z", p.v_z),
        ("mu_y1", p.mu_y1),
        ("mu_y2", p.mu_y2),
        ("v_y1", p.v_y1),
        ("v_y2", p.v_y2),
        ("mu_dk", p.mu_dk),
        ("phi_dk", p.phi_dk),
        ("v_zdk", p.v_zdk),
        ("k1_hat_last", p.k1_hat_last),
        ("spread_last", p.spread_last),
    ] {
        t.push(name, 0, v);
    }
    t.push_series("pmf", 0, &p.jump_joint_pmf);
    t.push("spread_lag", 0, p.spread_lag);
    t
}

/// Joint jump pmf in `JUMP_STATES` order. At most one state may be absent; it
/// receives the remaining mass (the published table omits `(1,0)`).
pub fn jump_pmf_from_table(t: &ParamTable) -> Result<[f64; 4]> {
    let mut pmf = [f64::NAN; 4];
    for (name, index, value) in &t.rows {
        if name != "pmf" {
            continue;
        }
        let slot = usize::try_from(*index)
            .ok()
            .filter(|i| *i < 4)
            .ok_or_else(|| Error::InvalidParameter(format!("pmf state {index}")))?;
        pmf[slot] = value.parse().map_err(|_| Error::InvalidParameter(format!("pmf[{index}] = {value:?}")))?;
    }
    let missing: Vec<usize> = (0..4).filter(|i| pmf[*i].is_nan()).collect();
    match missing.as_slice() {
        [] => {}
        [i] => pmf[*i] = pmf.iter().filter(|p| !p.is_nan()).fold(1.0, |rest, p| rest - p),
        _ => return Err(Error::InvalidParameter("pmf needs at least three states".into())),
    }
    Ok(pmf)
}

pub fn zhou_from_table(t: &ParamTable) -> Result<ZhouStyleParams> {
    let ((ages1, a1), (_, b1), (ages2, a2), (_, b2)) = (t.series("a1")?, t.series("b1")?, t.series("a2")?, t.series("b2")?);
    let jump_joint_pmf = jump_pmf_from_table(t)?;
    let p = ZhouStyleParams {
        ages1,
        a1,
        b1,
        ages2,
        a2,
        b2,
        mu_k: t.scalar("mu_k")?,
        v_z: t.scalar("v_z")?,
        mu_y1: t.scalar("mu_y1")?,
        mu_y2: t.scalar("mu_y2")?,
        v_y1: t.scalar("v_y1")?,
        v_y2: t.scalar("v_y2")?,
        mu_dk: t.scalar("mu_dk")?,
        phi_dk: t.scalar("phi_dk")?,
        v_zdk: t.scalar("v_zdk")?,
        jump_joint_pmf,
        k1_hat_last: t.scalar("k1_hat_last").unwrap_or(0.0),
        spread_last: t.scalar("spread_last").unwrap_or(0.0),
        spread_lag: t.scalar("spread_lag").map_or(0, |v| v as usize),
    };
    p.validate()?;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use longbasis_core::synthetic::{EW_MALES_A, EW_MALES_B};

    fn roundtrip(t: &ParamTable) -> ParamTable {
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        ParamTable::read(buf.as_slice()).unwrap()
    }

    #[test]
    fn lc_roundtrip_is_bit_exact() {
        let p = LcParams {
            ages: Span { first: 60, last: 89 },
            years: Span { first: 1961, last: 1963 },
            a: EW_MALES_A.to_vec(),
            b: EW_MALES_B.to_vec(),
            k: vec![0.1 + 0.2, -1.0 / 3.0, 0.2333333333333333],
        };
        let t = roundtrip(&lc_to_table(&p));
        assert_eq!(lc_from_table(&t).unwrap(), p);
        assert_eq!(t.rows[0], ("a".to_string(), 60, "-4.2486".to_string()));
    }

    #[test]
    fn jump_roundtrip() {
        let p = longbasis_core::jump::ew_males_reference_params();
        let t = roundtrip(&jump_to_table(&p, RenewalFamily::Weibull));
        assert_eq!(jump_from_table(&t).unwrap(), (p, RenewalFamily::Weibull));
    }

    #[test]
    fn book_fits_roundtrip_for_every_family() {
        use longbasis_core::book::{fit_book, reference_rates};
        use longbasis_core::synthetic::{generate, SyntheticWorld};
        let panels = generate(&SyntheticWorld::ew_style(), 3, true).unwrap();
        let lc = longbasis_core::lc::fit_lc(&panels.reference, &Default::default()).unwrap().params;
        let rates = reference_rates(&lc, panels.book.ages(), panels.book.years()).unwrap();
        for family in BookFamily::ALL {
            let fit = fit_book(family, &lc, &rates, &panels.book, &Default::default()).unwrap();
            assert_eq!(book_from_table(&roundtrip(&book_to_table(&fit))).unwrap(), fit, "{family:?}");
        }
    }

    #[test]
    fn zhou_roundtrip() {
        let p =
            longbasis_core::alt::published_zhou_params(Span { first: 60, last: 89 }, EW_MALES_A.to_vec(), EW_MALES_B.to_vec());
        assert_eq!(zhou_from_table(&roundtrip(&zhou_to_table(&p))).unwrap(), p);
    }

    #[test]
    fn gaps_are_rejected() {
        let mut t = ParamTable::default();
        t.push("a", 60, 1.0);
        t.push("a", 62, 1.0);
        assert!(t.series("a").is_err());
    }
}
