//! JSON document holding a fitted model together with everything needed to
//! project new observations: training curves, grids and the metric.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::{FunctionalDataset, MetricFunction, TimeGrid};
use crate::kernel::{FitOptions, KpcaModel};
use crate::metric::{AgeGrid, CdfBounds, DistanceTable, Point, PointMetric};

pub const MODEL_FORMAT: &str = "mkpca-model";
pub const MODEL_VERSION: u32 = 1;

/// Serializable description of a [`PointMetric`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MetricDescriptor {
    CdfL2 { age_grid: AgeGrid },
    Euclidean { dim: usize },
    Table { table: DistanceTable },
}

impl MetricDescriptor {
    pub fn from_metric(metric: &PointMetric) -> Self {
        match metric {
            PointMetric::CdfL2 { grid } => MetricDescriptor::CdfL2 {
                age_grid: (**grid).clone(),
            },
            PointMetric::Euclidean { dim } => MetricDescriptor::Euclidean { dim: *dim },
            PointMetric::Table(t) => MetricDescriptor::Table {
                table: (**t).clone(),
            },
        }
    }

    pub fn to_metric(&self) -> PointMetric {
        match self {
            MetricDescriptor::CdfL2 { age_grid } => PointMetric::CdfL2 {
                grid: Arc::new(age_grid.clone()),
            },
            MetricDescriptor::Euclidean { dim } => PointMetric::Euclidean { dim: *dim },
            MetricDescriptor::Table { table } => PointMetric::Table(Arc::new(table.clone())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationDoc {
    pub id: String,
    /// One value sequence per time point.
    pub curve: Vec<Vec<f64>>,
}

/// Training observations in serializable form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingData {
    pub metric: MetricDescriptor,
    pub time_grid: TimeGrid,
    pub observations: Vec<ObservationDoc>,
}

impl TrainingData {
    pub fn from_dataset(ds: &FunctionalDataset) -> Self {
        let observations = ds
            .observations()
            .iter()
            .map(|o| ObservationDoc {
                id: o.id.clone(),
                curve: o.curve.iter().map(point_values).collect(),
            })
            .collect();
        Self {
            metric: MetricDescriptor::from_metric(ds.metric()),
            time_grid: (**ds.time_grid()).clone(),
            observations,
        }
    }

    /// Rebuilds the dataset; stored CDF values were validated when written.
    pub fn to_dataset(&self) -> Result<FunctionalDataset> {
        let metric = self.metric.to_metric();
        let observations = self
            .observations
            .iter()
            .map(|o| {
                let curve = o
                    .curve
                    .iter()
                    .map(|v| point_from_values(&metric, v))
                    .collect::<Result<Vec<_>>>()?;
                Ok(MetricFunction::new(o.id.clone(), curve))
            })
            .collect::<Result<Vec<_>>>()?;
        FunctionalDataset::new(Arc::new(self.time_grid.clone()), metric, observations)
    }
}

fn point_values(p: &Point) -> Vec<f64> {
    match p {
        Point::Cdf(cdf) => cdf.values().to_vec(),
        Point::Vector(v) => v.clone(),
        Point::Label(i) => vec![*i as f64],
    }
}

fn point_from_values(metric: &PointMetric, v: &[f64]) -> Result<Point> {
    match metric {
        PointMetric::CdfL2 { grid } => {
            // values are already clamped, so relaxed validation reproduces them bitwise
            let cdf = crate::metric::validate_cdf(v, grid, &CdfBounds::relaxed())?;
            Ok(Point::Cdf(cdf))
        }
        PointMetric::Euclidean { .. } => Ok(Point::Vector(v.to_vec())),
        PointMetric::Table(_) => match v {
            [x] if x.fract() == 0.0 && *x >= 0.0 => Ok(Point::Label(*x as usize)),
            _ => Err(Error::Serde(format!("invalid table label {v:?}"))),
        },
    }
}

/// Everything written to `model.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format: String,
    pub version: u32,
    pub metric: String,
    pub options: FitOptions,
    pub kpca: KpcaModel,
    /// Absent when the model was fitted from a bare distance matrix.
    pub training: Option<TrainingData>,
    /// Group labels by unit id.
    #[serde(default)]
    pub groups: BTreeMap<String, String>,
}

impl ModelDocument {
    pub fn new(
        metric: &str,
        options: FitOptions,
        kpca: KpcaModel,
        training: Option<&FunctionalDataset>,
    ) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            metric: metric.into(),
            options,
            kpca,
            training: training.map(TrainingData::from_dataset),
            groups: BTreeMap::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Self = serde_json::from_str(text)?;
        if doc.format != MODEL_FORMAT {
            return Err(Error::Serde(format!(
                "not a model document: format `{}`",
                doc.format
            )));
        }
        if doc.version != MODEL_VERSION {
            return Err(Error::Serde(format!(
                "unsupported model version {} (expected {MODEL_VERSION})",
                doc.version
            )));
        }
        Ok(doc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{synth_gaussian_cdf_process, SynthesisConfig};
    use crate::kernel::fit_kpca;

    #[test]
    fn document_round_trip_preserves_training_data() {
        let ds = synth_gaussian_cdf_process(&SynthesisConfig {
            n_units: 4,
            time_points: vec![0.0, 1.0, 2.0],
            ..SynthesisConfig::default()
        })
        .unwrap();
        let opts = FitOptions::with_components(2);
        let model = fit_kpca(&ds, &opts).unwrap();
        let doc = ModelDocument::new("cdf-l2", opts, model, Some(&ds));
        let json = doc.to_json().unwrap();
        let back = ModelDocument::from_json(&json).unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.training.unwrap().to_dataset().unwrap(), ds);
    }

    #[test]
    fn rejects_foreign_documents() {
        assert!(ModelDocument::from_json("{\"format\":\"x\"}").is_err());
    }
}
