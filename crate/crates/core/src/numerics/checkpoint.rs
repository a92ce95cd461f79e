//! Text checkpoint container.
//!
//! ```text
//! htnav-checkpoint v1
//! meta <n>
//! <key> = <value>            (n lines)
//! params <n>
//! block <name> <decay 0|1> <ndim> <d0> <d1> ...
//! <row-major values>          (one line, shortest round-trip exponent form)
//! bn <n>
//! stats <name> <len>          (len 0 = unpopulated)
//! <mean values>
//! <var values>
//! adam <step_count> | adam none
//! <first moment values>       (one line per block, then)
//! <second moment values>
//! end
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::optim::AdamState;
use super::params::{ParamStore, RunningStats};
use super::{NumericsError, Tensor};

pub const CHECKPOINT_MAGIC: &str = "htnav-checkpoint v1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub params: ParamStore,
    pub adam: Option<AdamState>,
}

fn write_values(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{v:e}");
    }
    out.push('\n');
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(CHECKPOINT_MAGIC);
        out.push('\n');
        let _ = writeln!(out, "meta {}", self.meta.len());
        for (k, v) in &self.meta {
            let _ = writeln!(out, "{k} = {v}");
        }
        let _ = writeln!(out, "params {}", self.params.len());
        for b in self.params.blocks() {
            let shape = b.value.shape();
            let _ = write!(out, "block {} {} {}", b.name, u8::from(b.decay), shape.len());
            for d in shape {
                let _ = write!(out, " {d}");
            }
            out.push('\n');
            write_values(&mut out, b.value.data());
        }
        let entries: Vec<_> = self.params.bn_entries().collect();
        let _ = writeln!(out, "bn {}", entries.len());
        for (name, stats) in entries {
            match stats.values() {
                Some((m, v)) => {
                    let _ = writeln!(out, "stats {name} {}", m.len());
                    write_values(&mut out, m);
                    write_values(&mut out, v);
                }
                None => {
                    let _ = writeln!(out, "stats {name} 0");
                }
            }
        }
        match &self.adam {
            Some(st) => {
                let _ = writeln!(out, "adam {}", st.step_count);
                for (m, v) in st.first_moment.iter().zip(&st.second_moment) {
                    write_values(&mut out, m);
                    write_values(&mut out, v);
                }
            }
            None => out.push_str("adam none\n"),
        }
        out.push_str("end\n");
        out
    }

    pub fn parse(text: &str) -> Result<Self, NumericsError> {
        let mut lines = text.lines();
        let mut next = |what: &str| lines.next().ok_or_else(|| bad(format!("unexpected end of checkpoint while reading {what}")));
        if next("magic")? != CHECKPOINT_MAGIC {
            return Err(bad("missing checkpoint header".into()));
        }
        let n_meta = count(next("meta")?, "meta")?;
        let mut meta = BTreeMap::new();
        for _ in 0..n_meta {
            let line = next("meta entry")?;
            let (k, v) = line.split_once(" = ").ok_or_else(|| bad(format!("bad meta line {line:?}")))?;
            meta.insert(k.to_string(), v.to_string());
        }
        let n_params = count(next("params")?, "params")?;
        let mut params = ParamStore::new();
        for _ in 0..n_params {
            let header = next("block header")?;
            let parts: Vec<&str> = header.split_whitespace().collect();
            if parts.len() < 4 || parts[0] != "block" {
                return Err(bad(format!("bad block header {header:?}")));
            }
            let ndim: usize = num(parts[3])?;
            if parts.len() != 4 + ndim {
                return Err(bad(format!("bad block header {header:?}")));
            }
            let shape: Vec<usize> = parts[4..].iter().map(|p| num(p)).collect::<Result<_, _>>()?;
            let data = floats(next("block values")?)?;
            params.add(parts[1], Tensor::new(shape, data)?, parts[2] == "1")?;
        }
        let n_bn = count(next("bn")?, "bn")?;
        for _ in 0..n_bn {
            let header = next("stats header")?;
            let parts: Vec<&str> = header.split_whitespace().collect();
            if parts.len() != 3 || parts[0] != "stats" {
                return Err(bad(format!("bad stats header {header:?}")));
            }
            let len: usize = num(parts[2])?;
            let stats = if len == 0 {
                RunningStats::default()
            } else {
                let m = floats(next("stats mean")?)?;
                let v = floats(next("stats var")?)?;
                if m.len() != len || v.len() != len {
                    return Err(bad(format!("stats {} length mismatch", parts[1])));
                }
                RunningStats::from_values(m, v)
            };
            params.set_bn(parts[1].to_string(), stats);
        }
        let adam_line = next("adam")?;
        let adam = match adam_line.strip_prefix("adam ") {
            Some("none") => None,
            Some(step) => {
                let mut st = AdamState::new(&params);
                st.step_count = num(step)?;
                for i in 0..params.len() {
                    st.first_moment[i] = floats(next("adam first moment")?)?;
                    st.second_moment[i] = floats(next("adam second moment")?)?;
                }
                if !st.matches(&params) {
                    return Err(bad("adam state does not match parameter blocks".into()));
                }
                Some(st)
            }
            None => return Err(bad(format!("bad adam line {adam_line:?}"))),
        };
        if next("end")? != "end" {
            return Err(bad("missing end marker".into()));
        }
        Ok(Self { meta, params, adam })
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_text())
    }

    pub fn load(path: &Path) -> Result<Self, NumericsError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("reading {}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

fn bad(msg: String) -> NumericsError {
    NumericsError::Format(msg)
}

fn count(line: &str, tag: &str) -> Result<usize, NumericsError> {
    let rest = line.strip_prefix(tag).and_then(|r| r.strip_prefix(' ')).ok_or_else(|| bad(format!("expected '{tag} <n>', got {line:?}")))?;
    num(rest)
}

fn num<T: std::str::FromStr>(s: &str) -> Result<T, NumericsError> {
    s.trim().parse().map_err(|_| bad(format!("bad integer {s:?}")))
}

fn floats(line: &str) -> Result<Vec<f64>, NumericsError> {
    line.split_whitespace().map(|t| t.parse::<f64>().map_err(|_| bad(format!("bad float {t:?}")))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(values in proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..40), step in 0u64..1000) {
            let mut params = ParamStore::new();
            params.add("w", Tensor::vector(values.clone()), true).unwrap();
            params.add("gamma", Tensor::new(vec![1, 1], vec![values[0]]).unwrap(), false).unwrap();
            params.bn_stats_mut("bn0").update(&values, &values, 0.1);
            params.bn_stats_mut("empty");
            let mut adam = AdamState::new(&params);
            adam.step_count = step;
            adam.first_moment[0] = values.clone();
            let mut meta = BTreeMap::new();
            meta.insert("model.channels".to_string(), "8".to_string());
            let ck = Checkpoint { meta, params, adam: Some(adam) };
            let back = Checkpoint::parse(&ck.to_text()).unwrap();
            prop_assert_eq!(back.to_text(), ck.to_text());
            let a: Vec<u64> = ck.params.blocks()[0].value.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = back.params.blocks()[0].value.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
            prop_assert_eq!(back, ck);
        }
    }

    #[test]
    fn truncated_file_is_an_error() {
        let mut params = ParamStore::new();
        params.add_const("b", &[3], 0.25).unwrap();
        let text = Checkpoint { meta: BTreeMap::new(), params, adam: None }.to_text();
        let cut = &text[..text.len() - 4];
        assert!(Checkpoint::parse(cut).is_err());
    }
}
