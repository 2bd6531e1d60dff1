use std::io::Write;

use serde::Serialize;

use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
    /// A non-finite training loss ended the run.
    pub diverged: bool,
}

impl TrainLog {
    pub fn final_train_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }

    /// `epoch,lr,train_loss,val_loss`; an empty `val_loss` means no
    /// validation subjects.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for e in &self.epochs {
            out.serialize(e)?;
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Keeps the network with the lowest validation loss.
pub(crate) struct EarlyStop {
    best: Option<(f64, rhomap_nn::Network)>,
    best_epoch: usize,
    since_best: usize,
    patience: Option<usize>,
}

impl EarlyStop {
    pub(crate) fn new(patience: Option<usize>) -> Self {
        Self {
            best: None,
            best_epoch: 0,
            since_best: 0,
            patience,
        }
    }

    /// Records one epoch; true means stop now.
    pub(crate) fn observe(&mut self, epoch: usize, val_loss: Option<f64>, net: &rhomap_nn::Network) -> bool {
        let Some(v) = val_loss else {
            self.best_epoch = epoch;
            return false;
        };
        if self.best.as_ref().is_none_or(|(b, _)| v < *b) {
            self.best = Some((v, net.clone()));
            self.best_epoch = epoch;
            self.since_best = 0;
            false
        } else {
            self.since_best += 1;
            self.patience.is_some_and(|p| self.since_best >= p)
        }
    }

    pub(crate) fn finish(self, net: rhomap_nn::Network, log: &mut TrainLog) -> rhomap_nn::Network {
        log.best_epoch = self.best_epoch;
        self.best.map_or(net, |(_, b)| b)
    }
}
