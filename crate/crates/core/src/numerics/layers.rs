use super::{BnMode, Graph, NumericsError, ParamId, ParamStore, RunningStats, Var, BN_MOMENTUM};

/// Batch-norm behaviour for one forward pass over an immutable parameter store.
///
/// In training passes the updated running statistics are collected and only
/// written back by [`BnPass::apply`], after the optimizer step.
#[derive(Debug, Default)]
pub enum BnPass {
    #[default]
    Infer,
    Train(Vec<(String, RunningStats)>),
}

impl BnPass {
    pub fn train() -> Self {
        BnPass::Train(Vec::new())
    }

    pub fn is_train(&self) -> bool {
        matches!(self, BnPass::Train(_))
    }

    pub fn apply(self, store: &mut ParamStore) {
        if let BnPass::Train(updates) = self {
            for (name, stats) in updates {
                *store.bn_stats_mut(&name) = stats;
            }
        }
    }
}

/// `gamma * normalize(x) + beta` with the running stats registered under `name`.
pub fn batchnorm_layer(g: &mut Graph, store: &ParamStore, x: Var, gamma: ParamId, beta: ParamId, name: &str, pass: &mut BnPass) -> Result<Var, NumericsError> {
    let (gv, bv) = (g.param(store, gamma), g.param(store, beta));
    match pass {
        BnPass::Infer => g.batchnorm2d(x, gv, bv, 1e-5, BnMode::Infer(store.bn_stats(name))),
        BnPass::Train(updates) => {
            let mut stats = match updates.iter().rev().find(|(n, _)| n == name) {
                Some((_, s)) => s.clone(),
                None => store.bn_stats(name).clone(),
            };
            let out = g.batchnorm2d(x, gv, bv, 1e-5, BnMode::Train { stats: &mut stats, momentum: BN_MOMENTUM })?;
            updates.push((name.to_string(), stats));
            Ok(out)
        }
    }
}
