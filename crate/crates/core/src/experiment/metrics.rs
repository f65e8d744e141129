use std::collections::VecDeque;
use std::io::Write;

/// First line of every metrics file.
pub const METRICS_SCHEMA: &str = "# perfgen-metrics v1";
pub const METRICS_COLUMNS: [&str; 9] = [
    "step",
    "disc_loss",
    "gen_loss",
    "accuracy",
    "acc_mean",
    "acc_std",
    "fjd",
    "labeled",
    "executed",
];

/// One metrics row. `labeled` counts ground-truth labels consumed so far
/// (pre-labeled records plus executions), `executed` counts executions alone.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub disc_loss: f64,
    pub gen_loss: f64,
    pub accuracy: Option<f64>,
    pub acc_mean: Option<f64>,
    pub acc_std: Option<f64>,
    pub fjd: Option<f64>,
    pub labeled: u64,
    pub executed: u64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRow {
    fn fields(&self) -> [String; 9] {
        [
            self.step.to_string(),
            self.disc_loss.to_string(),
            self.gen_loss.to_string(),
            opt(self.accuracy),
            opt(self.acc_mean),
            opt(self.acc_std),
            opt(self.fjd),
            self.labeled.to_string(),
            self.executed.to_string(),
        ]
    }
}

/// Append-only CSV writer with a schema line and a column header.
pub struct MetricsWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(mut writer: W) -> std::io::Result<Self> {
        writeln!(writer, "{METRICS_SCHEMA}")?;
        let mut inner = csv::Writer::from_writer(writer);
        inner.write_record(METRICS_COLUMNS)?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, row: &MetricsRow) -> std::io::Result<()> {
        self.inner.write_record(row.fields())?;
        Ok(())
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }

    pub fn into_inner(self) -> W {
        self.inner
            .into_inner()
            .map_err(|e| e.into_error())
            .expect("flush metrics")
    }
}

/// Mean and population standard deviation over the last `window` values.
#[derive(Debug, Clone)]
pub struct RollingStats {
    window: usize,
    values: VecDeque<f64>,
}

impl RollingStats {
    pub fn new(window: usize) -> Self {
        Self {
            window: window.max(1),
            values: VecDeque::new(),
        }
    }

    pub fn push(&mut self, v: f64) -> (f64, f64) {
        if self.values.len() == self.window {
            self.values.pop_front();
        }
        self.values.push_back(v);
        let n = self.values.len() as f64;
        let mean = self.values.iter().sum::<f64>() / n;
        let var = self.values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }
}

/// First step at which accuracy reached a threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Milestone {
    pub threshold: f64,
    pub step: u64,
    pub labels_consumed: u64,
    pub executed: u64,
}

/// Records milestone crossings for a fixed set of thresholds.
#[derive(Debug, Clone)]
pub struct MilestoneTracker {
    pending: Vec<f64>,
    reached: Vec<Milestone>,
}

impl MilestoneTracker {
    pub fn new(thresholds: &[f64]) -> Self {
        let mut pending = thresholds.to_vec();
        pending.sort_by(f64::total_cmp);
        Self {
            pending,
            reached: Vec::new(),
        }
    }

    pub fn observe(&mut self, accuracy: f64, step: u64, labels_consumed: u64, executed: u64) {
        while let Some(&t) = self.pending.first() {
            if accuracy < t {
                break;
            }
            self.pending.remove(0);
            log::info!("accuracy {accuracy} reached {t} at step {step} ({labels_consumed} labels)");
            self.reached.push(Milestone {
                threshold: t,
                step,
                labels_consumed,
                executed,
            });
        }
    }

    pub fn reached(&self) -> &[Milestone] {
        &self.reached
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["threshold", "step", "labels_consumed", "executed"])?;
        for m in &self.reached {
            w.write_record([
                m.threshold.to_string(),
                m.step.to_string(),
                m.labels_consumed.to_string(),
                m.executed.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writer_layout() {
        let mut w = MetricsWriter::new(Vec::new()).unwrap();
        w.write(&MetricsRow {
            step: 50,
            disc_loss: 0.5,
            gen_loss: 1.25,
            accuracy: Some(0.3),
            acc_mean: Some(0.3),
            acc_std: Some(0.0),
            fjd: None,
            labeled: 3_100_000,
            executed: 0,
        })
        .unwrap();
        let text = String::from_utf8(w.into_inner()).unwrap();
        assert_eq!(
            text,
            "# perfgen-metrics v1\nstep,disc_loss,gen_loss,accuracy,acc_mean,acc_std,fjd,labeled,executed\n\
             50,0.5,1.25,0.3,0.3,0,,3100000,0\n"
        );
    }

    #[test]
    fn rolling_window() {
        let mut r = RollingStats::new(2);
        assert_eq!(r.push(1.0), (1.0, 0.0));
        assert_eq!(r.push(3.0), (2.0, 1.0));
        assert_eq!(r.push(3.0), (3.0, 0.0));
    }

    #[test]
    fn milestones_fire_once_in_order() {
        let mut m = MilestoneTracker::new(&[0.8, 0.5, 0.96]);
        m.observe(0.4, 10, 1, 0);
        m.observe(0.85, 20, 2, 0);
        m.observe(0.6, 30, 3, 0);
        m.observe(0.97, 40, 4, 0);
        let steps: Vec<(f64, u64)> = m.reached().iter().map(|x| (x.threshold, x.step)).collect();
        assert_eq!(steps, vec![(0.5, 20), (0.8, 20), (0.96, 40)]);
    }
}
