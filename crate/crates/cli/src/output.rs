//! CSV and key=value writers.

use std::fmt::Write as _;

use dynbc_core::energy::EnergySample;
use dynbc_core::harness::{SweepRow, Verdict, VerdictKind};
use dynbc_core::mesh::Mesh;
use nalgebra::DVector;
use sha2::{Digest, Sha256};

/// Plain decimal for moderate magnitudes, scientific otherwise. Round-trips
/// through `str::parse::<f64>`.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else if x == 0.0 || (1e-4..1e16).contains(&x.abs()) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

pub const TRAJECTORY_HEADER: &str =
    "t,E,kinetic,potential_quadratic,J,dissipation_cum,identity_residual,norm_H1,norm_v_H0,norm_Lp,norm_Lq_gamma1,upsilon,dt";

pub fn trajectory_csv(samples: &[EnergySample]) -> String {
    let mut out = String::from(TRAJECTORY_HEADER);
    out.push('\n');
    for s in samples {
        let row = [
            s.t,
            s.e,
            s.kinetic,
            s.potential_quadratic,
            s.j,
            s.dissipation_cum,
            s.identity_residual,
            s.norm_h1,
            s.norm_v_h0,
            s.norm_lp,
            s.norm_lq_gamma1,
            s.upsilon,
            s.dt,
        ];
        out.push_str(&row.iter().map(|&x| fmt_num(x)).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}

/// Nodal snapshot with Dirichlet nodes filled by zero.
pub fn snapshot_csv(mesh: &Mesh, u_nodal: &[f64], v_nodal: &[f64]) -> String {
    let coords = ["x", "y", "z"];
    let mut out = String::from("node");
    for c in coords.iter().take(mesh.dim()) {
        out.push(',');
        out.push_str(c);
    }
    out.push_str(",u,v\n");
    for i in 0..mesh.num_nodes() {
        let _ = write!(out, "{i}");
        for x in mesh.node(i) {
            let _ = write!(out, ",{}", fmt_num(*x));
        }
        let _ = writeln!(out, ",{},{}", fmt_num(u_nodal[i]), fmt_num(v_nodal[i]));
    }
    out
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "none".into(), fmt_num)
}

pub fn verdict_pairs(v: &Verdict) -> Vec<(String, String)> {
    let mut kv = vec![("kind".to_string(), v.kind.name().to_string())];
    match &v.kind {
        VerdictKind::Global { window_end } => kv.push(("window_end".into(), fmt_num(*window_end))),
        VerdictKind::BlowUp { t_estimate, norm_at_abort } => {
            kv.push(("t_estimate".into(), fmt_num(*t_estimate)));
            kv.push(("norm_at_abort".into(), fmt_num(*norm_at_abort)));
        }
        VerdictKind::Inconclusive { reason } => kv.push(("reason".into(), reason.clone())),
    }
    kv.push(("gamma".into(), opt(v.gamma)));
    kv.push(("source_norm_at_abort".into(), opt(v.source_norm_at_abort)));
    kv.push(("max_upsilon".into(), opt(v.max_upsilon)));
    kv.push(("upsilon_rate".into(), opt(v.upsilon_rate)));
    kv.push(("upsilon_fit_residual".into(), opt(v.upsilon_fit_residual)));
    let d = &v.dt_summary;
    kv.push(("accepted_steps".into(), d.accepted.to_string()));
    kv.push(("rejected_steps".into(), d.rejected.to_string()));
    kv.push(("min_dt".into(), fmt_num(d.min_dt)));
    kv.push(("max_dt".into(), fmt_num(d.max_dt)));
    if let Some(s) = &v.final_sample {
        kv.push(("final_t".into(), fmt_num(s.t)));
        kv.push(("final_E".into(), fmt_num(s.e)));
        kv.push(("final_norm_H1".into(), fmt_num(s.norm_h1)));
        kv.push(("final_norm_v_H0".into(), fmt_num(s.norm_v_h0)));
    }
    kv
}

pub fn key_value_block(kv: &[(String, String)]) -> String {
    kv.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

/// Parameters, regime columns, verdict kind and blow-up time per row.
/// Row errors become `verdict.kind = error`; the messages are returned
/// separately so the caller can report them.
pub fn sweep_csv(rows: &[SweepRow]) -> (String, Vec<String>) {
    let mut out = String::new();
    let mut errors = Vec::new();
    let params: Vec<&str> = rows.first().map(|r| r.params.iter().map(|p| p.0.as_str()).collect()).unwrap_or_default();
    let mut header: Vec<String> = params.iter().map(|p| format!("param.{p}")).collect();
    header.extend(
        ["regime.label", "regime.m", "regime.mu", "regime.p", "regime.q", "regime.subcritical", "regime.initial_energy"]
            .map(String::from),
    );
    header.extend(["verdict.kind", "verdict.t_estimate", "max_upsilon"].map(String::from));
    out.push_str(&header.join(","));
    out.push('\n');
    for (i, row) in rows.iter().enumerate() {
        let mut cells: Vec<String> = row.params.iter().map(|p| fmt_num(p.1)).collect();
        cells.push(row.label().into());
        match &row.report {
            Ok(r) => {
                cells.extend([r.m, r.mu, r.p, r.q].map(fmt_num));
                cells.push(r.subcritical.to_string());
                cells.push(opt(r.initial_energy));
            }
            Err(e) => {
                cells.extend(std::iter::repeat_n(String::new(), 6));
                errors.push(format!("row {i}: classification failed: {e}"));
            }
        }
        match &row.verdict {
            Ok(v) => {
                cells.push(v.kind.name().into());
                let t = match v.kind {
                    VerdictKind::BlowUp { t_estimate, .. } => Some(t_estimate),
                    _ => None,
                };
                cells.push(opt(t));
                cells.push(opt(v.max_upsilon));
            }
            Err(e) => {
                cells.extend(["error".to_string(), "none".into(), "none".into()]);
                errors.push(format!("row {i}: {e}"));
            }
        }
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    (out, errors)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn nodal_pair(ops: &dynbc_core::assembly::DiscreteOperators, u: &DVector<f64>, v: &DVector<f64>) -> (Vec<f64>, Vec<f64>) {
    (ops.extend_to_nodes(u), ops.extend_to_nodes(v))
}
