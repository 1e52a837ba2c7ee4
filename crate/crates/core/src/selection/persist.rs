//! `.model` files: `SBTM`, a little-endian u16 format version, a u32
//! length-prefixed JSON metadata document, then raw little-endian f64
//! arrays in the order listed by the metadata.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FittedPipeline, FittedPreprocessing, PipelineSpec, Result, SelectionError};
use crate::features::{FeatureMatrix, NgramRange, SvdTransform, TfidfTransform, Vocabulary};
use crate::labeling::SentimentClass;
use crate::models::{
    BinaryMachine, KMeansModel, LogRegModel, ModelFamily, ModelParameters, NaiveBayesModel, SvmModel, TrainedModel,
    N_CLASSES,
};

pub const MAGIC: [u8; 4] = *b"SBTM";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct VocabularyMeta {
    ngram_range: NgramRange,
    tokens: Vec<String>,
    document_frequency: Vec<usize>,
    n_documents: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Dims {
    tfidf: usize,
    svd: Option<usize>,
    model_input: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ModelLayout {
    LogReg,
    MultinomialNb,
    RbfSvm { support_counts: [Option<usize>; N_CLASSES] },
    KMeans { cluster_class: Vec<usize> },
}

#[derive(Debug, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Metadata {
    pipeline: PipelineSpec,
    family: ModelFamily,
    vocabulary: VocabularyMeta,
    dims: Dims,
    model: ModelLayout,
    arrays: Vec<ArrayEntry>,
}

#[derive(Default)]
struct ArrayWriter {
    entries: Vec<ArrayEntry>,
    data: Vec<u8>,
}

impl ArrayWriter {
    fn put(&mut self, name: impl Into<String>, values: &[f64]) {
        self.entries.push(ArrayEntry {
            name: name.into(),
            len: values.len(),
        });
        for v in values {
            self.data.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn corrupt(msg: impl Into<String>) -> SelectionError {
    SelectionError::Corrupt(msg.into())
}

pub fn model_to_bytes(pipeline: &FittedPipeline) -> Vec<u8> {
    let pre = &pipeline.preprocessing;
    let mut arrays = ArrayWriter::default();
    arrays.put("idf", &pre.tfidf.idf);
    if let Some(svd) = &pre.svd {
        arrays.put("svd_components", svd.components.as_slice());
        arrays.put("svd_singular_values", &svd.singular_values);
    }
    let layout = match &pipeline.model.parameters {
        ModelParameters::LogReg(m) => {
            arrays.put("weights", &m.weights);
            arrays.put("bias", &m.bias);
            ModelLayout::LogReg
        }
        ModelParameters::MultinomialNb(m) => {
            arrays.put("log_prior", &m.log_prior);
            arrays.put("log_likelihood", &m.log_likelihood);
            ModelLayout::MultinomialNb
        }
        ModelParameters::RbfSvm(m) => {
            arrays.put("gamma", &[m.gamma]);
            let mut support_counts = [None; N_CLASSES];
            for (c, machine) in m.machines.iter().enumerate() {
                if let Some(machine) = machine {
                    support_counts[c] = Some(machine.coefficients.len());
                    arrays.put(format!("support_vectors_{c}"), machine.support_vectors.as_slice());
                    arrays.put(format!("coefficients_{c}"), &machine.coefficients);
                    arrays.put(format!("bias_{c}"), &[machine.bias]);
                }
            }
            ModelLayout::RbfSvm { support_counts }
        }
        ModelParameters::KMeans(m) => {
            arrays.put("centroids", m.centroids.as_slice());
            ModelLayout::KMeans {
                cluster_class: m.cluster_class.iter().map(|c| c.index()).collect(),
            }
        }
    };
    let vocabulary = &pre.tfidf.vocabulary;
    let metadata = Metadata {
        pipeline: pipeline.spec,
        family: pipeline.model.spec.family(),
        vocabulary: VocabularyMeta {
            ngram_range: vocabulary.ngram_range,
            tokens: vocabulary.tokens().to_vec(),
            document_frequency: vocabulary.document_frequency().to_vec(),
            n_documents: vocabulary.n_documents(),
        },
        dims: Dims {
            tfidf: pre.tfidf.n_features(),
            svd: pre.svd.as_ref().map(SvdTransform::output_dim),
            model_input: pipeline.model.input_dim,
        },
        model: layout,
        arrays: arrays.entries,
    };
    let json = serde_json::to_vec(&metadata).expect("metadata serializes");
    let json_len = u32::try_from(json.len()).expect("metadata under 4 GiB");
    let mut out = Vec::with_capacity(10 + json.len() + arrays.data.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&json_len.to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&arrays.data);
    out
}

struct ArrayReader<'a> {
    entries: std::slice::Iter<'a, ArrayEntry>,
    data: &'a [u8],
}

impl ArrayReader<'_> {
    fn take(&mut self, name: &str, len: usize) -> Result<Vec<f64>> {
        let entry = self
            .entries
            .next()
            .ok_or_else(|| corrupt(format!("array `{name}` not declared")))?;
        if entry.name != name || entry.len != len {
            return Err(corrupt(format!(
                "expected array `{name}` of length {len}, found `{}` of length {}",
                entry.name, entry.len
            )));
        }
        let bytes = len.checked_mul(8).ok_or_else(|| corrupt("array length overflow"))?;
        if self.data.len() < bytes {
            return Err(SelectionError::Truncated);
        }
        let (head, rest) = self.data.split_at(bytes);
        self.data = rest;
        Ok(head
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }

    fn finish(mut self) -> Result<()> {
        if self.entries.next().is_some() {
            return Err(corrupt("undeclared trailing arrays"));
        }
        if !self.data.is_empty() {
            return Err(corrupt(format!("{} trailing bytes", self.data.len())));
        }
        Ok(())
    }
}

fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<FeatureMatrix> {
    FeatureMatrix::new(rows, cols, data).map_err(|e| corrupt(e.to_string()))
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<FittedPipeline> {
    if bytes.len() < MAGIC.len() {
        return Err(if MAGIC.starts_with(bytes) {
            SelectionError::Truncated
        } else {
            SelectionError::BadMagic
        });
    }
    if bytes[..4] != MAGIC {
        return Err(SelectionError::BadMagic);
    }
    let header = bytes.get(4..10).ok_or(SelectionError::Truncated)?;
    let version = u16::from_le_bytes([header[0], header[1]]);
    if version != FORMAT_VERSION {
        return Err(SelectionError::VersionUnsupported(version));
    }
    let json_len = u32::from_le_bytes(header[2..6].try_into().expect("4 bytes")) as usize;
    let json = bytes.get(10..10 + json_len).ok_or(SelectionError::Truncated)?;
    let meta: Metadata = serde_json::from_slice(json).map_err(|e| corrupt(format!("metadata: {e}")))?;
    let mut reader = ArrayReader {
        entries: meta.arrays.iter(),
        data: &bytes[10 + json_len..],
    };

    let d = meta.dims.tfidf;
    let v = meta.vocabulary;
    if v.tokens.len() != d || v.ngram_range != meta.pipeline.preprocessing.vectorizer {
        return Err(corrupt("vocabulary does not match declared dimensions"));
    }
    let vocabulary = Vocabulary::from_parts(v.ngram_range, v.tokens, v.document_frequency, v.n_documents)
        .ok_or_else(|| corrupt("invalid vocabulary"))?;
    let idf = reader.take("idf", d)?;
    let tfidf = TfidfTransform { vocabulary, idf };
    let svd = match meta.dims.svd {
        None => None,
        Some(k) => {
            let components = matrix(d, k, reader.take("svd_components", d * k)?)?;
            let singular_values = reader.take("svd_singular_values", k)?;
            Some(SvdTransform::from_parts(components, singular_values).ok_or_else(|| corrupt("svd shape"))?)
        }
    };
    let m = meta.dims.model_input;
    if m != svd.as_ref().map_or(d, SvdTransform::output_dim) {
        return Err(corrupt("model input dimension does not match preprocessing"));
    }
    let parameters = match (meta.family, meta.model) {
        (ModelFamily::LogReg, ModelLayout::LogReg) => {
            let weights = reader.take("weights", N_CLASSES * m)?;
            let bias = reader.take("bias", N_CLASSES)?;
            ModelParameters::LogReg(LogRegModel {
                weights,
                bias: bias.try_into().expect("three entries"),
            })
        }
        (ModelFamily::MultinomialNB, ModelLayout::MultinomialNb) => {
            let log_prior = reader.take("log_prior", N_CLASSES)?;
            let log_likelihood = reader.take("log_likelihood", N_CLASSES * m)?;
            ModelParameters::MultinomialNb(NaiveBayesModel {
                log_prior: log_prior.try_into().expect("three entries"),
                log_likelihood,
            })
        }
        (ModelFamily::RbfSvm, ModelLayout::RbfSvm { support_counts }) => {
            let gamma = reader.take("gamma", 1)?[0];
            let mut machines: [Option<BinaryMachine>; N_CLASSES] = Default::default();
            for (c, count) in support_counts.iter().enumerate() {
                if let Some(n_sv) = *count {
                    let support_vectors = matrix(n_sv, m, reader.take(&format!("support_vectors_{c}"), n_sv * m)?)?;
                    let coefficients = reader.take(&format!("coefficients_{c}"), n_sv)?;
                    let bias = reader.take(&format!("bias_{c}"), 1)?[0];
                    machines[c] = Some(BinaryMachine {
                        support_vectors,
                        coefficients,
                        bias,
                    });
                }
            }
            ModelParameters::RbfSvm(SvmModel { gamma, machines })
        }
        (ModelFamily::KMeans, ModelLayout::KMeans { cluster_class }) => {
            let k = cluster_class.len();
            let centroids = matrix(k, m, reader.take("centroids", k * m)?)?;
            let cluster_class = cluster_class
                .into_iter()
                .map(|i| SentimentClass::from_index(i).ok_or_else(|| corrupt(format!("class index {i}"))))
                .collect::<Result<Vec<_>>>()?;
            ModelParameters::KMeans(KMeansModel {
                centroids,
                cluster_class,
            })
        }
        (family, _) => return Err(corrupt(format!("layout does not match family {family}"))),
    };
    reader.finish()?;
    if meta.pipeline.model.family() != meta.family {
        return Err(corrupt("pipeline spec names a different family"));
    }
    Ok(FittedPipeline {
        spec: meta.pipeline,
        preprocessing: FittedPreprocessing { tfidf, svd },
        model: TrainedModel {
            spec: meta.pipeline.model,
            input_dim: m,
            parameters,
        },
    })
}

pub fn save_model(pipeline: &FittedPipeline, path: &Path) -> Result<()> {
    fs::write(path, model_to_bytes(pipeline))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<FittedPipeline> {
    model_from_bytes(&fs::read(path)?)
}
