//! Flat parameter storage with named, shaped segments.

use std::ops::Range;

use ndarray::{ArrayView1, ArrayView2, ArrayView3, ArrayViewMut1, ArrayViewMut2, ArrayViewMut3};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentKind {
    EncoderWeight,
    EncoderBias,
    MlpWeight,
    MlpBias,
    BnScale,
    BnShift,
    DecoderWeight,
    DecoderBias,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub kind: SegmentKind,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Segment indices of one scalar layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlpSlots {
    pub weight: usize,
    pub bias: usize,
    pub scale: usize,
    pub shift: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub segments: Vec<Segment>,
    pub total: usize,
    pub enc_w: usize,
    pub enc_b: usize,
    pub mlp: Vec<MlpSlots>,
    /// `(weight, bias)` of the three decoder layers; the last has no bias.
    pub dec: [(usize, Option<usize>); 3],
}

impl Layout {
    /// `widths` as in the network config, `p` data dimensions, `l` network
    /// basis size.
    pub fn new(widths: &[usize], p: usize, l: usize) -> Self {
        let mut segments = Vec::new();
        let mut offset = 0;
        let mut add = |name: String, kind: SegmentKind, shape: Vec<usize>| {
            let seg = Segment { name, kind, offset, shape };
            offset += seg.len();
            segments.push(seg);
            segments.len() - 1
        };
        let k = widths.len();
        let enc_w = add("encoder.w".into(), SegmentKind::EncoderWeight, vec![widths[0], p, l]);
        let enc_b = add("encoder.b".into(), SegmentKind::EncoderBias, vec![widths[0]]);
        let mut mlp = Vec::new();
        for j in 0..k - 3 {
            let (fan_in, fan_out) = (widths[j], widths[j + 1]);
            mlp.push(MlpSlots {
                weight: add(format!("mlp{j}.w"), SegmentKind::MlpWeight, vec![fan_out, fan_in]),
                bias: add(format!("mlp{j}.b"), SegmentKind::MlpBias, vec![fan_out]),
                scale: add(format!("mlp{j}.gamma"), SegmentKind::BnScale, vec![fan_out]),
                shift: add(format!("mlp{j}.eta"), SegmentKind::BnShift, vec![fan_out]),
            });
        }
        let (q1, q2, q3) = (widths[k - 3], widths[k - 2], widths[k - 1]);
        let d1w = add("decoder1.w".into(), SegmentKind::DecoderWeight, vec![q2, q1, l]);
        let d1b = add("decoder1.b".into(), SegmentKind::DecoderBias, vec![q2, l]);
        let d2w = add("decoder2.w".into(), SegmentKind::DecoderWeight, vec![q3, q2, l]);
        let d2b = add("decoder2.b".into(), SegmentKind::DecoderBias, vec![q3, l]);
        let d3w = add("decoder3.w".into(), SegmentKind::DecoderWeight, vec![p, q3, l]);
        Layout { segments, total: offset, enc_w, enc_b, mlp, dec: [(d1w, Some(d1b)), (d2w, Some(d2b)), (d3w, None)] }
    }

    pub fn seg(&self, i: usize) -> &Segment {
        &self.segments[i]
    }

    pub fn v1<'a>(&self, data: &'a [f64], i: usize) -> ArrayView1<'a, f64> {
        ArrayView1::from(&data[self.segments[i].range()])
    }

    pub fn v2<'a>(&self, data: &'a [f64], i: usize) -> ArrayView2<'a, f64> {
        let s = &self.segments[i];
        let (a, b) = match s.shape.len() {
            2 => (s.shape[0], s.shape[1]),
            3 => (s.shape[0], s.shape[1] * s.shape[2]),
            _ => (1, s.shape[0]),
        };
        ArrayView2::from_shape((a, b), &data[s.range()]).unwrap()
    }

    pub fn v3<'a>(&self, data: &'a [f64], i: usize) -> ArrayView3<'a, f64> {
        let s = &self.segments[i];
        ArrayView3::from_shape((s.shape[0], s.shape[1], s.shape[2]), &data[s.range()]).unwrap()
    }

    pub fn m1<'a>(&self, data: &'a mut [f64], i: usize) -> ArrayViewMut1<'a, f64> {
        ArrayViewMut1::from(&mut data[self.segments[i].range()])
    }

    pub fn m2<'a>(&self, data: &'a mut [f64], i: usize) -> ArrayViewMut2<'a, f64> {
        let s = &self.segments[i];
        let (a, b) = match s.shape.len() {
            2 => (s.shape[0], s.shape[1]),
            3 => (s.shape[0], s.shape[1] * s.shape[2]),
            _ => (1, s.shape[0]),
        };
        let r = s.range();
        ArrayViewMut2::from_shape((a, b), &mut data[r]).unwrap()
    }

    pub fn m3<'a>(&self, data: &'a mut [f64], i: usize) -> ArrayViewMut3<'a, f64> {
        let s = &self.segments[i];
        let r = s.range();
        ArrayViewMut3::from_shape((s.shape[0], s.shape[1], s.shape[2]), &mut data[r]).unwrap()
    }

    /// Segments whose coefficients carry the ℓ1 roughness penalty.
    pub fn decoder_segments(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for (w, b) in self.dec {
            out.push(w);
            out.extend(b);
        }
        out
    }
}
