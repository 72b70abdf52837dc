//! Hybrid acoustic model: BLSTM trunk plus either a single softmax head or
//! the two NSDL heads.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView2, ArrayViewD, ArrayViewMutD};

use crate::error::{Error, Result};
use crate::inventory::{StateId, StateInventory};
use crate::nnet::{
    join, log_softmax_rows, BlstmStack, BlstmStackConfig, BlstmTrace, Checkpoint, Linear, Mode,
    Module, ParamKind, ParameterSet, Routing, Stage,
};
use crate::nsdl::{
    build_speech_mask, ce_baseline_loss, ce_logit_grads, combine_log_distribution, loss_nsdl,
    nsdl_logit_grads, NsdlBreakdown, NsdlHeads, NsdlLossConfig, NsdlOutputs,
};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Single softmax over all states with cross entropy.
    Ce,
    Nsdl,
}

impl LossKind {
    pub fn stage(self) -> Stage {
        match self {
            LossKind::Ce => Stage::Ce,
            LossKind::Nsdl => Stage::Nsdl,
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.stage().fmt(f)
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ce" => Ok(LossKind::Ce),
            "nsdl" => Ok(LossKind::Nsdl),
            o => Err(Error::Config(format!("unknown loss `{o}` (expected ce or nsdl)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OutputHead {
    Ce(Linear),
    Nsdl(NsdlHeads),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcousticModel {
    pub trunk: BlstmStack,
    pub head: OutputHead,
    /// Log state priors used to turn posteriors into scaled likelihoods.
    pub log_prior: Array1<f64>,
    pub inventory: StateInventory,
}

/// Loss and gradients for one chunk.
#[derive(Debug, Clone)]
pub struct ChunkGradient {
    pub breakdown: NsdlBreakdown,
    pub grads: AcousticModel,
    pub trace: BlstmTrace,
}

impl AcousticModel {
    pub fn new(
        trunk: &BlstmStackConfig,
        inventory: &StateInventory,
        loss: LossKind,
        rng: &mut seed::Rng,
    ) -> Result<Self> {
        let trunk = BlstmStack::new(trunk, Routing::Joint, rng)?;
        let head = Self::fresh_head(trunk.output_dim(), inventory, loss, rng);
        let n = inventory.len();
        Ok(Self {
            trunk,
            head,
            log_prior: Array1::from_elem(n, -(n as f64).ln()),
            inventory: inventory.clone(),
        })
    }

    fn fresh_head(hidden: usize, inventory: &StateInventory, loss: LossKind, rng: &mut seed::Rng) -> OutputHead {
        match loss {
            LossKind::Ce => OutputHead::Ce(Linear::new(hidden, inventory.len(), rng)),
            LossKind::Nsdl => OutputHead::Nsdl(NsdlHeads::new(hidden, inventory, rng)),
        }
    }

    pub fn loss_kind(&self) -> LossKind {
        match self.head {
            OutputHead::Ce(_) => LossKind::Ce,
            OutputHead::Nsdl(_) => LossKind::Nsdl,
        }
    }

    /// Priors from state occupation counts with add-one smoothing.
    pub fn set_priors_from_counts(&mut self, counts: &[usize]) -> Result<()> {
        if counts.len() != self.inventory.len() {
            return Err(Error::Contract("one count per state".into()));
        }
        let total: f64 = counts.iter().map(|&c| c as f64 + 1.0).sum();
        self.log_prior = counts.iter().map(|&c| ((c as f64 + 1.0) / total).ln()).collect();
        Ok(())
    }

    /// Frame-wise `log P(s | x)`, columns indexed by state id; eval mode.
    pub fn log_posteriors(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let h = self.trunk.forward(x, Mode::Eval)?.output;
        self.head_log_posteriors(h.view())
    }

    fn head_log_posteriors(&self, h: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        match &self.head {
            OutputHead::Ce(l) => Ok(log_softmax_rows(l.forward(h)?.view())),
            OutputHead::Nsdl(heads) => {
                let (z1, z2) = heads.logits(h)?;
                Ok(combine_log_distribution(z1.view(), z2.view(), &self.inventory))
            }
        }
    }

    /// Train-mode loss on the `core` rows of `x`, with gradients for every
    /// parameter. Context rows only warm up the recurrences.
    pub fn chunk_gradient(
        &self,
        x: ArrayView2<'_, f64>,
        core: Range<usize>,
        alignment: &[StateId],
        loss: &NsdlLossConfig,
        rng: &mut seed::Rng,
    ) -> Result<ChunkGradient> {
        if core.end > x.nrows() || core.len() != alignment.len() || core.is_empty() {
            return Err(Error::Contract("core range does not match the alignment".into()));
        }
        let fw = self.trunk.forward(x, Mode::Train(rng))?;
        let h = fw.output.slice(s![core.clone(), ..]);
        let mut grads = crate::nnet::zeros_like(self);
        let (breakdown, dh) = match (&self.head, &mut grads.head) {
            (OutputHead::Ce(l), OutputHead::Ce(gl)) => {
                let z = l.forward(h)?;
                let ce = ce_baseline_loss(z.view(), alignment)?;
                let dz = ce_logit_grads(z.view(), alignment)?;
                let b = NsdlBreakdown {
                    total: ce,
                    l1: 0.0,
                    l2: ce,
                    frames: alignment.len(),
                    floored: 0,
                };
                (b, l.backward(h, dz.view(), gl))
            }
            (OutputHead::Nsdl(heads), OutputHead::Nsdl(gh)) => {
                let (z1, z2) = heads.logits(h)?;
                let out = NsdlOutputs::from_logits(z1.view(), z2.view());
                let mask = build_speech_mask(alignment, &self.inventory)?;
                let b = loss_nsdl(&out, alignment, &mask, &self.inventory, loss)?;
                let (d1, d2) = nsdl_logit_grads(&out, alignment, &self.inventory, loss)?;
                let dh = heads.head1.backward(h, d1.view(), &mut gh.head1)
                    + heads.head2.backward(h, d2.view(), &mut gh.head2);
                (b, dh)
            }
            _ => unreachable!("gradient mirrors the model"),
        };
        if !breakdown.total.is_finite() {
            return Err(Error::Numeric("non-finite training loss".into()));
        }
        let mut dy = Array2::zeros(fw.output.dim());
        dy.slice_mut(s![core, ..]).assign(&dh);
        self.trunk.backward(&fw, dy.view(), &mut grads.trunk)?;
        Ok(ChunkGradient {
            breakdown,
            grads,
            trace: fw.trace.expect("train mode records a trace"),
        })
    }

    /// The output layers alone, as a parameter container.
    pub fn head_params(&self) -> HeadParams<'_> {
        HeadParams(&self.head)
    }

    pub fn to_checkpoint(&self, digest: &str) -> Checkpoint {
        Checkpoint {
            stage: self.loss_kind().stage(),
            digest: digest.to_string(),
            params: ParameterSet::of(self),
            optimizer: None,
        }
    }

    /// Rebuilds a model of the checkpoint's kind under the given trunk
    /// config and inventory.
    pub fn from_checkpoint(
        ckpt: &Checkpoint,
        trunk: &BlstmStackConfig,
        inventory: &StateInventory,
        digest: &str,
    ) -> Result<Self> {
        ckpt.expect_digest(digest)?;
        let loss = match ckpt.stage {
            Stage::Ce => LossKind::Ce,
            Stage::Nsdl => LossKind::Nsdl,
            s => {
                return Err(Error::Input(format!(
                    "checkpoint stage `{s}` is not an acoustic model"
                )))
            }
        };
        let mut m = Self::new(trunk, inventory, loss, &mut seed::rng(0, "shape", 0))?;
        ckpt.params.restore_into(&mut m)?;
        Ok(m)
    }
}

pub struct HeadParams<'a>(&'a OutputHead);

impl Module for HeadParams<'_> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, ArrayViewD<'_, f64>)) {
        match self.0 {
            OutputHead::Ce(l) => l.visit(&join(prefix, "head"), f),
            OutputHead::Nsdl(h) => h.visit(prefix, f),
        }
    }

    fn visit_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, ParamKind, ArrayViewMutD<'_, f64>)) {
        unreachable!("read-only view")
    }
}

impl Module for AcousticModel {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, ArrayViewD<'_, f64>)) {
        self.trunk.visit(&join(prefix, "trunk"), f);
        match &self.head {
            OutputHead::Ce(l) => l.visit(&join(prefix, "head"), f),
            OutputHead::Nsdl(h) => h.visit(prefix, f),
        }
        f(&join(prefix, "log_prior"), ParamKind::Buffer, self.log_prior.view().into_dyn());
    }

    fn visit_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, ParamKind, ArrayViewMutD<'_, f64>),
    ) {
        self.trunk.visit_mut(&join(prefix, "trunk"), f);
        match &mut self.head {
            OutputHead::Ce(l) => l.visit_mut(&join(prefix, "head"), f),
            OutputHead::Nsdl(h) => h.visit_mut(prefix, f),
        }
        f(
            &join(prefix, "log_prior"),
            ParamKind::Buffer,
            self.log_prior.view_mut().into_dyn(),
        );
    }
}
