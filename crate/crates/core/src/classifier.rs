//! [`Classifier`] adapters for the CNN and the feature-based k-NN pipeline.

use crate::baseline::{extract_feature_vector, knn_classify, Extraction, FeatureConfig};
use crate::error::{Error, Result};
use crate::evaluation::{Classifier, Prediction};
use crate::network::Network;
use crate::optimizer::{train, LossTrace, Sample, SgdConfig};
use crate::rng::RngStream;
use crate::synthgen::{FingerprintRecord, HenryClass};
use crate::tensor::Tensor;
use crate::topology::NetworkTopology;

/// Stream id of the weight-initialisation rng under the training seed.
const INIT_STREAM: u64 = 1;

/// Trains a fresh network from `topology` on every `fit`. Never rejects.
pub struct CnnClassifier {
    topology: NetworkTopology,
    config: SgdConfig,
    network: Option<Network<f32>>,
    trace: LossTrace,
}

impl CnnClassifier {
    pub fn new(topology: NetworkTopology, config: SgdConfig) -> Self {
        Self {
            topology,
            config,
            network: None,
            trace: LossTrace::default(),
        }
    }

    /// Wraps an already trained network; `fit` would retrain it from scratch.
    pub fn from_network(network: Network<f32>, config: SgdConfig) -> Self {
        Self {
            topology: network.topology().clone(),
            config,
            network: Some(network),
            trace: LossTrace::default(),
        }
    }

    pub fn network(&self) -> Option<&Network<f32>> {
        self.network.as_ref()
    }

    pub fn into_network(self) -> Option<Network<f32>> {
        self.network
    }

    pub fn trace(&self) -> &LossTrace {
        &self.trace
    }
}

/// He-initialised network for `topology`, seeded by the training seed.
pub fn init_network(topology: &NetworkTopology, seed: u64) -> Result<Network<f32>> {
    Network::new(topology.clone(), &mut RngStream::new(seed, INIT_STREAM))
}

impl Classifier for CnnClassifier {
    fn name(&self) -> String {
        "cnn".into()
    }

    fn fit(&mut self, train_set: &[&FingerprintRecord]) -> Result<()> {
        let mut net = init_network(&self.topology, self.config.seed)?;
        let samples: Vec<Sample<'_>> = train_set.iter().map(|r| (&r.image, r.class.index())).collect();
        self.trace = train(&mut net, &samples, &self.config)?;
        self.network = Some(net);
        Ok(())
    }

    fn predict(&self, image: &Tensor<f32>) -> Result<Prediction> {
        let net = self
            .network
            .as_ref()
            .ok_or_else(|| Error::State("CNN used before fit".into()))?;
        let class = HenryClass::from_index(net.predict(image)?).expect("five output units");
        Ok(Prediction::Class(class))
    }
}

/// Feature extraction with rejection, then k-NN over the accepted training vectors.
pub struct KnnPipeline {
    pub features: FeatureConfig,
    pub k: usize,
    train: Vec<(Vec<f64>, HenryClass)>,
}

impl KnnPipeline {
    pub fn new(features: FeatureConfig, k: usize) -> Self {
        Self {
            features,
            k,
            train: Vec::new(),
        }
    }

    pub fn training_size(&self) -> usize {
        self.train.len()
    }
}

impl Classifier for KnnPipeline {
    fn name(&self) -> String {
        format!("knn(k={})", self.k)
    }

    /// Rejected training impressions are skipped.
    fn fit(&mut self, train_set: &[&FingerprintRecord]) -> Result<()> {
        let extracted = crate::par_map(train_set, |r| extract_feature_vector(&r.image, &self.features));
        let mut train = Vec::new();
        for (r, e) in train_set.iter().zip(extracted) {
            if let Extraction::Features(f) = e? {
                train.push((f.values, r.class));
            }
        }
        if train.len() < self.k {
            return Err(Error::invalid(format!(
                "only {} accepted training vectors for k = {}",
                train.len(),
                self.k
            )));
        }
        self.train = train;
        Ok(())
    }

    fn predict(&self, image: &Tensor<f32>) -> Result<Prediction> {
        match extract_feature_vector(image, &self.features)? {
            Extraction::Rejected(r) => Ok(Prediction::Rejected(r)),
            Extraction::Features(f) => Ok(Prediction::Class(knn_classify(&self.train, &f.values, self.k)?)),
        }
    }
}
