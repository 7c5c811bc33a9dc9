//! Topic assignment: nearest centroid in Euclidean space with z-score
//! filtering of outlying chunks.

mod provider;

pub use provider::{
    EmbeddingProvider, EmbeddingVector, HttpEmbeddingProvider, MockEmbeddingProvider, StaticEmbeddingProvider,
};

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::chunking::Chunk;
use crate::classification::ClassificationReport;
use crate::docmodel::{Annotation, TopicSpec};
use crate::error::{Error, Result};

/// Topic index marking irrelevant content.
pub const IRRELEVANT: i64 = -1;

pub const DEFAULT_Z_THRESHOLD: f64 = 1.0;

/// Cosine of the angle between two non-zero vectors.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::InvalidInput(format!(
            "dimension mismatch: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|b| b * b).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::InvalidInput(
            "cosine similarity is undefined for a zero vector".into(),
        ));
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

pub fn euclidean_distance(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicCentroid {
    pub topic_index: usize,
    pub centroid: EmbeddingVector,
    /// The title followed by each objective.
    pub member_texts: Vec<String>,
}

fn check_model(expected: &mut Option<String>, dim: &mut Option<usize>, v: &EmbeddingVector) -> Result<()> {
    match expected {
        Some(m) if *m != v.model_id => {
            return Err(Error::InvalidInput(format!(
                "embeddings from different models mixed: '{m}' and '{}'",
                v.model_id
            )))
        }
        None => *expected = Some(v.model_id.clone()),
        _ => {}
    }
    match dim {
        Some(d) if *d != v.dim() => Err(Error::InvalidInput(format!(
            "embedding dimension changed within a run: {d} vs {}",
            v.dim()
        ))),
        None => {
            *dim = Some(v.dim());
            Ok(())
        }
        _ => Ok(()),
    }
    .and_then(|_| {
        if v.values.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidInput("embedding contains non-finite values".into()))
        }
    })
}

/// Element-wise mean of the embeddings of each topic's title and objectives.
pub fn build_centroids(topics: &[TopicSpec], provider: &dyn EmbeddingProvider) -> Result<Vec<TopicCentroid>> {
    let mut model = None;
    let mut dim = None;
    topics
        .iter()
        .map(|t| {
            if t.objectives.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "topic {} has no learning objectives",
                    t.index
                )));
            }
            let texts: Vec<String> = std::iter::once(t.title.clone())
                .chain(t.objectives.iter().cloned())
                .collect();
            let vectors = provider
                .embed(&texts)
                .map_err(|e| Error::Provider(crate::error::ProviderError::Fatal(format!("topic {}: {e}", t.index))))?;
            if vectors.len() != texts.len() {
                return Err(Error::InvalidInput(format!(
                    "topic {}: provider returned wrong vector count",
                    t.index
                )));
            }
            for v in &vectors {
                check_model(&mut model, &mut dim, v)?;
            }
            let d = vectors[0].dim();
            let mut mean = vec![0.0; d];
            for v in &vectors {
                for (m, x) in mean.iter_mut().zip(&v.values) {
                    *m += x;
                }
            }
            let n = vectors.len() as f64;
            mean.iter_mut().for_each(|m| *m /= n);
            Ok(TopicCentroid {
                topic_index: t.index,
                centroid: EmbeddingVector::new(mean, vectors[0].model_id.clone()),
                member_texts: texts,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// Final topic: the nearest centroid, or [`IRRELEVANT`] after filtering.
    pub topic: i64,
    pub nearest: usize,
    pub distance: f64,
    /// `None` when the population is too small or uniform for a z-score.
    pub z_score: Option<f64>,
}

/// Nearest-centroid assignment followed by z-score filtering over the
/// population of nearest distances (population standard deviation). Equal
/// distances go to the lower topic index.
pub fn assign_topics(
    embeddings: &[EmbeddingVector],
    centroids: &[TopicCentroid],
    z_threshold: f64,
) -> Result<Vec<Assignment>> {
    if centroids.is_empty() {
        return Err(Error::InvalidInput("no topic centroids".into()));
    }
    let mut model = None;
    let mut dim = None;
    for c in centroids {
        check_model(&mut model, &mut dim, &c.centroid)?;
    }
    let mut out = Vec::with_capacity(embeddings.len());
    for e in embeddings {
        check_model(&mut model, &mut dim, e)?;
        let (nearest, distance) = centroids
            .iter()
            .map(|c| (c.topic_index, euclidean_distance(&e.values, &c.centroid.values)))
            .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                Some((bi, bd)) if bd < d || (bd == d && bi < i) => Some((bi, bd)),
                _ => Some((i, d)),
            })
            .expect("centroids non-empty");
        out.push(Assignment {
            topic: nearest as i64,
            nearest,
            distance,
            z_score: None,
        });
    }

    if out.len() < 2 {
        if !out.is_empty() {
            log::warn!("z-score filter skipped: a single chunk has no distance spread");
        }
        return Ok(out);
    }
    let n = out.len() as f64;
    let mean = out.iter().map(|a| a.distance).sum::<f64>() / n;
    let sd = (out.iter().map(|a| (a.distance - mean).powi(2)).sum::<f64>() / n).sqrt();
    if sd == 0.0 {
        log::warn!("z-score filter skipped: all nearest distances are equal");
        return Ok(out);
    }
    for a in &mut out {
        let z = (a.distance - mean) / sd;
        a.z_score = Some(z);
        if z > z_threshold {
            a.topic = IRRELEVANT;
        }
    }
    Ok(out)
}

/// Embeds every chunk once and sets its topic.
pub fn classify_chunks(
    chunks: &[Chunk],
    centroids: &[TopicCentroid],
    provider: &dyn EmbeddingProvider,
    z_threshold: f64,
) -> Result<(Vec<Chunk>, Vec<Assignment>)> {
    if centroids.is_empty() {
        return Err(Error::InvalidInput("no topic centroids".into()));
    }
    let texts: Vec<String> = chunks.iter().map(|c| c.text.clone()).collect();
    let embeddings = if texts.is_empty() {
        Vec::new()
    } else {
        provider.embed(&texts)?
    };
    if embeddings.len() != chunks.len() {
        return Err(Error::InvalidInput("provider returned wrong vector count".into()));
    }
    let assignments = assign_topics(&embeddings, centroids, z_threshold)?;
    let classified = chunks
        .iter()
        .zip(&assignments)
        .map(|(c, a)| Chunk {
            topic: Some(a.topic),
            ..c.clone()
        })
        .collect();
    Ok((classified, assignments))
}

/// Block-level support-weighted F1 of topic assignment.
///
/// Chunks pass their topic to member blocks; blocks in no chunk count as
/// [`IRRELEVANT`]. The plain score covers only blocks annotated with a
/// real topic and averages over real topics. The adjusted score covers
/// every annotated block and treats [`IRRELEVANT`] as a class, so
/// irrelevant content that was kept drags it down.
pub fn topic_f1(chunks: &[Chunk], annotations: &[Annotation], adjusted: bool) -> Result<f64> {
    let predicted: HashMap<&str, i64> = chunks
        .iter()
        .flat_map(|c| {
            c.block_ids
                .iter()
                .map(move |id| (id.as_str(), c.topic.unwrap_or(IRRELEVANT)))
        })
        .collect();
    let pairs: Vec<(String, String)> = annotations
        .iter()
        .filter(|a| adjusted || a.topic != IRRELEVANT)
        .map(|a| {
            let p = predicted.get(a.block_id.as_str()).copied().unwrap_or(IRRELEVANT);
            (a.topic.to_string(), p.to_string())
        })
        .collect();
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no annotated blocks to score".into()));
    }
    let labels: BTreeSet<i64> = pairs
        .iter()
        .flat_map(|(t, p)| [t.parse::<i64>().unwrap_or(IRRELEVANT), p.parse().unwrap_or(IRRELEVANT)])
        .filter(|&l| adjusted || l != IRRELEVANT)
        .collect();
    let labels: Vec<String> = labels.into_iter().map(|l| l.to_string()).collect();
    Ok(ClassificationReport::with_labels(&pairs, &labels)?.weighted_avg.f1)
}
