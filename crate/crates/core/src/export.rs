//! Tabular and checkpoint output.
//!
//! Tables are tab-separated with a header row; an empty input still gets
//! the header. Checkpoints are JSON lines whose floats are stored as the
//! hex digits of their IEEE bit pattern, so a reload is bit-exact.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::blowup::{BlowupReport, RateSample, SufficientConditionResult};
use crate::charkernel::KernelFields;
use crate::error::{Error, Result};
use crate::evolution::{CharState, StepDiagnostics};
use crate::fields::FieldSnapshot;

/// Lossless text form of `f64` values.
pub mod hexfloat {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn encode(v: f64) -> String {
        format!("{:016x}", v.to_bits())
    }

    pub fn decode(s: &str) -> Option<f64> {
        if s.len() != 16 {
            return None;
        }
        u64::from_str_radix(s, 16).ok().map(f64::from_bits)
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&encode(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        let s = String::deserialize(d)?;
        decode(&s).ok_or_else(|| serde::de::Error::custom(format!("bad hex float `{s}`")))
    }

    /// Same encoding for whole arrays.
    pub mod vec {
        use super::{decode, encode};
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            s.collect_seq(v.iter().map(|x| encode(*x)))
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            let raw = Vec::<String>::deserialize(d)?;
            raw.iter()
                .map(|s| {
                    decode(s)
                        .ok_or_else(|| serde::de::Error::custom(format!("bad hex float `{s}`")))
                })
                .collect()
        }
    }
}

/// One checkpoint line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    #[serde(with = "hexfloat")]
    pub t: f64,
    #[serde(with = "hexfloat::vec")]
    pub zeta: Vec<f64>,
    #[serde(with = "hexfloat::vec")]
    pub y: Vec<f64>,
    #[serde(with = "hexfloat::vec")]
    pub dy: Vec<f64>,
    #[serde(with = "hexfloat::vec")]
    pub acc_zv: Vec<f64>,
    #[serde(with = "hexfloat::vec")]
    pub acc_wu: Vec<f64>,
    #[serde(with = "hexfloat::vec")]
    pub acc_flux: Vec<f64>,
    #[serde(with = "hexfloat::vec")]
    pub u: Vec<f64>,
    #[serde(with = "hexfloat::vec")]
    pub w: Vec<f64>,
    #[serde(with = "hexfloat::vec")]
    pub v: Vec<f64>,
    #[serde(with = "hexfloat::vec")]
    pub z: Vec<f64>,
    /// Plain decimal; informational only.
    pub diagnostics: Option<StepDiagnostics>,
}

impl Checkpoint {
    pub fn from_state(s: &CharState, diagnostics: Option<&StepDiagnostics>) -> Self {
        Checkpoint {
            t: s.t,
            zeta: s.zeta.clone(),
            y: s.y.clone(),
            dy: s.dy.clone(),
            acc_zv: s.acc_zv.clone(),
            acc_wu: s.acc_wu.clone(),
            acc_flux: s.acc_flux.clone(),
            u: s.fields.u.clone(),
            w: s.fields.w.clone(),
            v: s.fields.v.clone(),
            z: s.fields.z.clone(),
            diagnostics: diagnostics.copied(),
        }
    }

    pub fn into_state(self) -> Result<CharState> {
        let n = self.zeta.len();
        for (what, len) in [
            ("checkpoint y", self.y.len()),
            ("checkpoint dy", self.dy.len()),
            ("checkpoint acc_zv", self.acc_zv.len()),
            ("checkpoint acc_wu", self.acc_wu.len()),
            ("checkpoint acc_flux", self.acc_flux.len()),
            ("checkpoint u", self.u.len()),
            ("checkpoint w", self.w.len()),
            ("checkpoint v", self.v.len()),
            ("checkpoint z", self.z.len()),
        ] {
            if len != n {
                return Err(Error::LengthMismatch {
                    what,
                    got: len,
                    expected: n,
                });
            }
        }
        Ok(CharState {
            t: self.t,
            zeta: self.zeta,
            y: self.y,
            dy: self.dy,
            acc_zv: self.acc_zv,
            acc_wu: self.acc_wu,
            acc_flux: self.acc_flux,
            fields: KernelFields {
                u: self.u,
                w: self.w,
                v: self.v,
                z: self.z,
            },
        })
    }
}

/// Writes one JSON line per state. `diagnostics` is matched by time.
pub fn write_checkpoints<W: Write>(
    mut out: W,
    states: &[CharState],
    diagnostics: &[StepDiagnostics],
) -> Result<()> {
    for s in states {
        let d = diagnostics.iter().find(|d| d.t == s.t);
        let line = serde_json::to_string(&Checkpoint::from_state(s, d))
            .map_err(|e| Error::Parse(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_checkpoints<R: BufRead>(input: R) -> Result<Vec<CharState>> {
    let mut states = Vec::new();
    for (k, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let c: Checkpoint = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("checkpoint line {}: {e}", k + 1)))?;
        states.push(c.into_state()?);
    }
    Ok(states)
}

fn write_row<W: Write>(out: &mut W, values: impl IntoIterator<Item = f64>) -> Result<()> {
    let row: Vec<String> = values.into_iter().map(|v| format!("{v:.17e}")).collect();
    writeln!(out, "{}", row.join("\t"))?;
    Ok(())
}

pub const SNAPSHOT_COLUMNS: [&str; 7] = ["x", "u", "v", "ux", "vx", "m", "n"];

/// `x u v ux vx m n`, plus `ut vt` when the snapshot carries them.
pub fn write_snapshot<W: Write>(mut out: W, s: &FieldSnapshot) -> Result<()> {
    let with_dt = s.ut.is_some() && s.vt.is_some();
    let mut header = SNAPSHOT_COLUMNS.join("\t");
    if with_dt {
        header.push_str("\tut\tvt");
    }
    writeln!(out, "# t = {:.17e}", s.t)?;
    writeln!(out, "{header}")?;
    for i in 0..s.x.len() {
        let mut row = vec![s.x[i], s.u[i], s.v[i], s.ux[i], s.vx[i], s.m[i], s.n[i]];
        if let (Some(ut), Some(vt)) = (&s.ut, &s.vt) {
            row.push(ut[i]);
            row.push(vt[i]);
        }
        write_row(&mut out, row)?;
    }
    Ok(())
}

pub fn write_reports<W: Write>(mut out: W, reports: &[BlowupReport]) -> Result<()> {
    writeln!(
        out,
        "t\tmin_dy\tcrit3\tcrit4_acc\tsup_mn\tjacobian_exp_discrepancy"
    )?;
    for r in reports {
        write_row(
            &mut out,
            [
                r.t,
                r.min_dy,
                r.crit3,
                r.crit4_acc,
                r.sup_mn,
                r.jacobian_exp_discrepancy,
            ],
        )?;
    }
    Ok(())
}

pub fn write_diagnostics<W: Write>(mut out: W, diags: &[StepDiagnostics]) -> Result<()> {
    writeln!(
        out,
        "t\tdt\tmin_dy\tres_m\tres_n\tjacobian_discrepancy\tzeta_c\tdzeta_c\tsize_bound_ok\tjacobian_bound_ok"
    )?;
    for d in diags {
        writeln!(
            out,
            "{:.17e}\t{:.17e}\t{:.17e}\t{:.17e}\t{:.17e}\t{:.17e}\t{:.17e}\t{:.17e}\t{}\t{}",
            d.t,
            d.dt,
            d.min_dy,
            d.res_m,
            d.res_n,
            d.jacobian_discrepancy,
            d.zeta_c,
            d.dzeta_c,
            d.size_bound_ok as u8,
            d.jacobian_bound_ok as u8
        )?;
    }
    Ok(())
}

/// Rate residuals; absent values are written as `nan`.
pub fn write_rate_samples<W: Write>(mut out: W, samples: &[RateSample]) -> Result<()> {
    writeln!(
        out,
        "t\tn_inv\tn_inv_bound\tres_n_inv\tm\tm_bound\tres_m\tres_blupr\tres_blupy"
    )?;
    for s in samples {
        write_row(
            &mut out,
            [
                s.t,
                s.n_inv,
                s.n_inv_bound,
                s.res_n_inv,
                s.m,
                s.m_bound,
                s.res_m,
                s.res_blupr.unwrap_or(f64::NAN),
                s.res_blupy.unwrap_or(f64::NAN),
            ],
        )?;
    }
    Ok(())
}

/// Sufficient-condition rows, one per probe.
pub fn write_conditions<W: Write>(mut out: W, rows: &[SufficientConditionResult]) -> Result<()> {
    writeln!(out, "x0\tnode\tM0\tN0\tL0\tdiscriminant\tt1\tt2\tverdict")?;
    for r in rows {
        let opt = |v: Option<f64>| v.map_or("nan".to_string(), |v| format!("{v:.17e}"));
        let verdict = serde_json::to_value(r.verdict)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        writeln!(
            out,
            "{:.17e}\t{}\t{:.17e}\t{:.17e}\t{:.17e}\t{:.17e}\t{}\t{}\t{verdict}",
            r.x0,
            r.node.map_or("-".to_string(), |n| n.to_string()),
            r.M0,
            r.N0,
            r.L0,
            r.discriminant,
            opt(r.t1),
            opt(r.t2),
        )?;
    }
    Ok(())
}

/// Pretty JSON for any serializable record.
pub fn write_json<W: Write, T: Serialize>(mut out: W, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    writeln!(out, "{text}")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blowup::{monitor_trajectory, SufficientConditionResult};
    use crate::evolution::{evolve, EvolveConfig};
    use crate::initdata::{build_grid, make_initial_data, FieldSource};
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn hexfloat_round_trips_every_bit_pattern(bits in any::<u64>()) {
            let v = f64::from_bits(bits);
            let back = hexfloat::decode(&hexfloat::encode(v)).unwrap();
            prop_assert_eq!(back.to_bits(), bits);
        }
    }

    #[test]
    fn hexfloat_rejects_garbage() {
        assert!(hexfloat::decode("xyz").is_none());
        assert!(hexfloat::decode("00000000000000000").is_none());
        assert!(hexfloat::decode("zzzzzzzzzzzzzzzz").is_none());
    }

    fn short_run() -> (crate::initdata::InitialData, crate::evolution::Trajectory) {
        let g = build_grid(20.0, 128, 4.0).unwrap();
        let d = make_initial_data(
            FieldSource::function(|x| (-x * x).exp()),
            FieldSource::function(|x| 0.5 * (-(x - 1.0) * (x - 1.0)).exp()),
            None,
            g,
        )
        .unwrap();
        let t = evolve(
            &d,
            &EvolveConfig {
                dt: 0.01,
                horizon: 0.03,
                ..Default::default()
            },
        )
        .unwrap();
        (d, t)
    }

    #[test]
    fn checkpoints_reload_bit_exact() {
        let (_, traj) = short_run();
        let mut buf = Vec::new();
        write_checkpoints(&mut buf, &traj.states, &traj.diagnostics).unwrap();
        assert_eq!(
            buf.iter().filter(|b| **b == b'\n').count(),
            traj.states.len()
        );
        let back = read_checkpoints(&buf[..]).unwrap();
        assert_eq!(back, traj.states);
    }

    #[test]
    fn corrupt_checkpoint_is_a_parse_error() {
        let err = read_checkpoints(&b"{\"t\": 1.0}\n"[..]).unwrap_err();
        assert!(matches!(err, Error::Parse(_)));
    }

    #[test]
    fn empty_inputs_give_header_only() {
        let mut buf = Vec::new();
        write_reports(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);
        let mut buf = Vec::new();
        write_diagnostics(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);
        let mut buf = Vec::new();
        write_checkpoints(&mut buf, &[], &[]).unwrap();
        assert!(buf.is_empty());
    }

    #[test]
    fn tables_have_one_row_per_record() {
        let (d, traj) = short_run();
        let reports = monitor_trajectory(&traj, &d);
        let mut buf = Vec::new();
        write_reports(&mut buf, &reports).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), reports.len() + 1);
        assert!(text.lines().skip(1).all(|l| l.split('\t').count() == 6));

        let snap = crate::fields::snapshot(traj.last().unwrap(), &[-1.0, 0.0, 1.0], &d, 0.0, true)
            .unwrap();
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &snap).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines().skip(1);
        assert_eq!(lines.next().unwrap(), "x\tu\tv\tux\tvx\tm\tn\tut\tvt");
        assert!(lines.all(|l| l.split('\t').count() == 9));

        let row = SufficientConditionResult::from_scalars(0.0, -5.0, 10.0, 1.0);
        let mut buf = Vec::new();
        write_conditions(&mut buf, &[row]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().nth(1).unwrap().ends_with("blow-up-forward"));
    }
}
