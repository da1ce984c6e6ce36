use serde::{Deserialize, Serialize};

/// Patience counter over validation CER, epochs numbered from 1. Only a
/// strictly lower CER counts as an improvement.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    epoch: usize,
    best: Option<(usize, f64)>,
    since_best: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observation {
    Improved,
    Waiting,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        assert!(patience >= 1, "patience must be >= 1");
        Self {
            patience,
            epoch: 0,
            best: None,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, val_cer: f64) -> Observation {
        self.epoch += 1;
        let improved = match self.best {
            None => !val_cer.is_nan(),
            Some((_, best)) => val_cer < best,
        };
        if improved {
            self.best = Some((self.epoch, val_cer));
            self.since_best = 0;
            return Observation::Improved;
        }
        self.since_best += 1;
        if self.since_best >= self.patience {
            Observation::Stop
        } else {
            Observation::Waiting
        }
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// `(epoch, cer)` of the best observation so far.
    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_cer: f64,
    pub learning_rate: f32,
}

/// One unit of training plus validation, separated from the stopping rule so
/// the rule can be driven by a scripted sequence.
pub trait EpochRunner {
    type Error;

    fn run_epoch(&mut self, epoch: usize) -> Result<EpochRecord, Self::Error>;

    /// `epoch` just produced a new best validation CER.
    fn improved(&mut self, epoch: usize);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopSummary {
    /// Epoch at which training ended (the convergence epoch).
    pub stop_epoch: usize,
    pub best_epoch: usize,
    pub best_val_cer: f64,
    /// True when patience ran out before `max_epochs`.
    pub stopped_early: bool,
    pub history: Vec<EpochRecord>,
}

pub fn run_with_early_stopping<R: EpochRunner>(
    runner: &mut R,
    max_epochs: usize,
    patience: usize,
) -> Result<StopSummary, R::Error> {
    let mut stopper = EarlyStopping::new(patience);
    let mut history = Vec::new();
    let mut stopped_early = false;
    for epoch in 1..=max_epochs {
        let record = runner.run_epoch(epoch)?;
        history.push(record);
        match stopper.observe(record.val_cer) {
            Observation::Improved => runner.improved(epoch),
            Observation::Waiting => {}
            Observation::Stop => {
                stopped_early = epoch < max_epochs;
                break;
            }
        }
    }
    let (best_epoch, best_val_cer) = stopper.best().unwrap_or((0, f64::NAN));
    Ok(StopSummary {
        stop_epoch: stopper.epoch(),
        best_epoch,
        best_val_cer,
        stopped_early,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub struct Scripted {
        pub values: Vec<f64>,
        pub improvements: Vec<usize>,
    }

    impl EpochRunner for Scripted {
        type Error = ();

        fn run_epoch(&mut self, epoch: usize) -> Result<EpochRecord, ()> {
            Ok(EpochRecord {
                epoch,
                train_loss: 0.0,
                val_cer: self.values[epoch - 1],
                learning_rate: 0.0,
            })
        }

        fn improved(&mut self, epoch: usize) {
            self.improvements.push(epoch);
        }
    }

    pub fn scripted(values: &[f64], patience: usize) -> (StopSummary, Vec<usize>) {
        let mut r = Scripted {
            values: values.to_vec(),
            improvements: Vec::new(),
        };
        let s = run_with_early_stopping(&mut r, values.len(), patience).unwrap();
        (s, r.improvements)
    }

    #[test]
    fn plateau_after_second_epoch() {
        let (s, imp) = scripted(&[0.5, 0.4, 0.4, 0.4, 0.4, 0.4], 2);
        assert_eq!((s.stop_epoch, s.best_epoch), (4, 2));
        assert!(s.stopped_early);
        assert_eq!(imp, vec![1, 2]);
        assert_eq!(s.history.len(), 4);
    }

    #[test]
    fn monotone_runs_to_the_end() {
        let v: Vec<f64> = (0..15).map(|i| 1.0 / (i + 1) as f64).collect();
        let (s, _) = scripted(&v, 3);
        assert_eq!((s.stop_epoch, s.best_epoch), (15, 15));
        assert!(!s.stopped_early);
    }

    #[test]
    fn equal_value_is_not_an_improvement() {
        let (s, _) = scripted(&[0.3, 0.3], 1);
        assert_eq!((s.stop_epoch, s.best_epoch), (2, 1));
    }
}
