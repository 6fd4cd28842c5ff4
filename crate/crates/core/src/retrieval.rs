//! Nearest training images to generated outputs under mean absolute
//! difference, for checking that a generator does not copy its training set.

use serde::{Deserialize, Serialize};

use crate::data::{Image, RangeTag};
use crate::error::{Error, Result};
use crate::metrics::mean_abs_diff;
use crate::montage::montage;

pub const DEFAULT_K: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: String,
    pub distance: f64,
}

/// Neighbors of one query, nearest first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    pub neighbors: Vec<Neighbor>,
}

/// Box-average by an integer `factor` that divides both sides.
pub fn downsample(img: &Image, factor: usize) -> Result<Image> {
    if factor == 0 || img.height % factor != 0 || img.width % factor != 0 {
        return Err(Error::InvalidArgument(format!(
            "downsample factor {factor} does not divide {}x{}",
            img.height, img.width
        )));
    }
    if factor == 1 {
        return Ok(img.clone());
    }
    let (h, w) = (img.height / factor, img.width / factor);
    let area = (factor * factor) as f64;
    let mut px = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f64; 3];
            for dy in 0..factor {
                for dx in 0..factor {
                    let p = img.at(y * factor + dy, x * factor + dx);
                    (0..3).for_each(|c| acc[c] += p[c] as f64);
                }
            }
            px.extend(acc.map(|v| (v / area) as f32));
        }
    }
    Image::new(h, w, px, img.range)
}

/// The `k` training images closest to `query`, ascending by distance and
/// then by id.
pub fn knn_l1(query: &Image, training: &[(String, Image)], k: usize) -> Result<Vec<Neighbor>> {
    if training.is_empty() {
        return Err(Error::Empty("retrieval needs at least one training image".into()));
    }
    if k == 0 || k > training.len() {
        return Err(Error::InvalidArgument(format!("k = {k} with {} training images", training.len())));
    }
    let mut all: Vec<Neighbor> = training
        .iter()
        .map(|(id, img)| Ok(Neighbor { id: id.clone(), distance: mean_abs_diff(query, img)? }))
        .collect::<Result<_>>()?;
    all.sort_by(|a, b| a.distance.total_cmp(&b.distance).then_with(|| a.id.cmp(&b.id)));
    all.truncate(k);
    Ok(all)
}

/// Retrieval with both sides box-downsampled by `factor` first.
pub fn knn_l1_downsampled(
    query: &Image,
    training: &[(String, Image)],
    k: usize,
    factor: usize,
) -> Result<Vec<Neighbor>> {
    if factor == 1 {
        return knn_l1(query, training, k);
    }
    let small: Vec<(String, Image)> =
        training.iter().map(|(id, img)| Ok((id.clone(), downsample(img, factor)?))).collect::<Result<_>>()?;
    knn_l1(&downsample(query, factor)?, &small, k)
}

/// Query every generated image against the training set.
pub fn retrieve_all(
    queries: &[(String, Image)],
    training: &[(String, Image)],
    k: usize,
    factor: usize,
) -> Result<Vec<QueryRecord>> {
    let small: Vec<(String, Image)> =
        training.iter().map(|(id, img)| Ok((id.clone(), downsample(img, factor)?))).collect::<Result<_>>()?;
    queries
        .iter()
        .map(|(id, img)| {
            Ok(QueryRecord { query_id: id.clone(), neighbors: knn_l1(&downsample(img, factor)?, &small, k)? })
        })
        .collect()
}

/// Grid with one row per query: conditioning input, generated image, then
/// the retrieved neighbors at full resolution.
pub fn retrieval_montage(
    records: &[QueryRecord],
    inputs: &[&Image],
    generated: &[&Image],
    training: &[(String, Image)],
) -> Result<Image> {
    if records.len() != inputs.len() || records.len() != generated.len() {
        return Err(Error::Shape("records, inputs and generated images differ in count".into()));
    }
    let k = records.first().map_or(0, |r| r.neighbors.len());
    let mut headers = vec!["input".to_string(), "generated".to_string()];
    headers.extend((1..=k).map(|i| format!("nn {i}")));
    let rows: Vec<Vec<Image>> = records
        .iter()
        .zip(inputs.iter().zip(generated))
        .map(|(r, (inp, gen))| {
            let mut row = vec![to_byte(inp)?, to_byte(gen)?];
            for n in &r.neighbors {
                let img = training
                    .iter()
                    .find(|(id, _)| *id == n.id)
                    .ok_or_else(|| Error::InvalidArgument(format!("neighbor {} not in training set", n.id)))?;
                row.push(to_byte(&img.1)?);
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    montage(&rows, Some(&headers))
}

fn to_byte(img: &Image) -> Result<Image> {
    match img.range {
        RangeTag::Byte => Ok(img.clone()),
        RangeTag::Normalized => crate::data::denormalize(img),
    }
}
