//! Video, hand-object graph and frame-clip consistency losses, and their
//! weighted total `λ_con·L_con + λ_haog·L_haog + λ_vid·L_vid`.
//!
//! Every term is a mean over its active elements. Graph builders return
//! nodes so gradients flow; the `*_value` helpers evaluate on plain data.

use serde::Serialize;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::haog::{BoundingBox, Haog, HANDS, SLOTS};
use crate::model::{consistency_fc, HaogHead, HaogPrediction, Parameters};
use crate::tensor::Mat;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_con: f64,
    pub lambda_haog: f64,
    pub lambda_vid: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_con: 10.0,
            lambda_haog: 5.0,
            lambda_vid: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_con", self.lambda_con),
            ("lambda_haog", self.lambda_haog),
            ("lambda_vid", self.lambda_vid),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

/// Sub-terms of the hand-object graph loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct HaogTerms {
    /// Mean of `1 − GIoU` over existing slots.
    pub box_giou: f64,
    /// Mean corner L1 (summed over 4 coordinates) over existing slots.
    pub box_l1: f64,
    pub existence: f64,
    pub contact: f64,
}

impl HaogTerms {
    pub fn total(&self) -> f64 {
        self.box_giou + self.box_l1 + self.existence + self.contact
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub l_vid: f64,
    pub l_haog: f64,
    pub haog: HaogTerms,
    pub l_con: f64,
    pub l_total: f64,
}

/// `λ_con·con + λ_haog·haog + λ_vid·vid`.
pub fn weighted_total(con: f64, haog: f64, vid: f64, w: &LossWeights) -> f64 {
    w.lambda_con * con + w.lambda_haog * haog + w.lambda_vid * vid
}

impl LossBreakdown {
    pub fn new(l_vid: f64, haog: HaogTerms, l_con: f64, w: &LossWeights) -> Self {
        let l_haog = haog.total();
        LossBreakdown {
            l_vid,
            l_haog,
            haog,
            l_con,
            l_total: weighted_total(l_con, l_haog, l_vid, w),
        }
    }
}

/// Graph form of the weighted total.
pub fn loss_total(g: &mut Graph, con: Var, haog: Var, vid: Var, w: &LossWeights) -> Var {
    let c = g.scale(con, w.lambda_con);
    let h = g.scale(haog, w.lambda_haog);
    let v = g.scale(vid, w.lambda_vid);
    let ch = g.add(c, h);
    g.add(ch, v)
}

/// Frame-score BCE against a one-hot target plus the state-change BCE.
/// Clips without a state change contribute only the state-change term.
pub fn loss_video(g: &mut Graph, frame_logits: Var, target: usize, osc_logit: Var, osc_label: u8) -> Result<Var> {
    let (frames, cols) = g.shape(frame_logits);
    if cols != 1 || frames == 0 {
        return Err(Error::Argument(format!("frame logits must be T x 1, got {frames}x{cols}")));
    }
    if target >= frames {
        return Err(Error::Argument(format!("target frame {target} outside 0..{frames}")));
    }
    let osc = g.bce_with_logits(osc_logit, vec![f64::from(osc_label)]);
    let osc = g.sum_all(osc);
    if osc_label == 0 {
        return Ok(osc);
    }
    let targets = (0..frames).map(|t| if t == target { 1.0 } else { 0.0 }).collect();
    let frame = g.bce_with_logits(frame_logits, targets);
    let frame = g.mean_all(frame);
    Ok(g.add(frame, osc))
}

pub fn video_loss_value(frame_logits: &[f64], target: usize, osc_logit: f64, osc_label: u8) -> Result<f64> {
    let mut g = Graph::new();
    let logits = g.constant(Mat::from_vec(frame_logits.len(), 1, frame_logits.to_vec()));
    let osc = g.scalar(osc_logit);
    let l = loss_video(&mut g, logits, target, osc, osc_label)?;
    Ok(g.value(l).item())
}

/// GIoU between a predicted box (scalar nodes) and a fixed box.
fn giou_node(g: &mut Graph, pred: [Var; 4], gt: &BoundingBox) -> Var {
    let [px1, py1, px2, py2] = pred;
    let gx1 = g.scalar(gt.x1);
    let gy1 = g.scalar(gt.y1);
    let gx2 = g.scalar(gt.x2);
    let gy2 = g.scalar(gt.y2);

    let ix1 = g.maximum(px1, gx1);
    let iy1 = g.maximum(py1, gy1);
    let ix2 = g.minimum(px2, gx2);
    let iy2 = g.minimum(py2, gy2);
    let iw = g.sub(ix2, ix1);
    let iw = g.relu(iw);
    let ih = g.sub(iy2, iy1);
    let ih = g.relu(ih);
    let inter = g.mul(iw, ih);

    let pw = g.sub(px2, px1);
    let ph = g.sub(py2, py1);
    let area_p = g.mul(pw, ph);
    let union = g.add_scalar(area_p, gt.area());
    let union = g.sub(union, inter);
    let iou = g.div(inter, union);

    let hx1 = g.minimum(px1, gx1);
    let hy1 = g.minimum(py1, gy1);
    let hx2 = g.maximum(px2, gx2);
    let hy2 = g.maximum(py2, gy2);
    let hw = g.sub(hx2, hx1);
    let hh = g.sub(hy2, hy1);
    let hull = g.mul(hw, hh);
    let gap = g.sub(hull, union);
    let penalty = g.div(gap, hull);
    g.sub(iou, penalty)
}

/// Corner nodes `[x1, y1, x2, y2]` of slot `j` from the `(cx, cy, w, h)` head.
fn corners(g: &mut Graph, boxes: Var, j: usize) -> [Var; 4] {
    let row = g.slice_rows(boxes, j, 1);
    let cx = g.slice_cols(row, 0, 1);
    let cy = g.slice_cols(row, 1, 1);
    let w = g.slice_cols(row, 2, 1);
    let h = g.slice_cols(row, 3, 1);
    let hw = g.scale(w, 0.5);
    let hh = g.scale(h, 0.5);
    [g.sub(cx, hw), g.sub(cy, hh), g.add(cx, hw), g.add(cy, hh)]
}

fn mean_of(g: &mut Graph, terms: &[Var]) -> Var {
    if terms.is_empty() {
        return g.scalar(0.0);
    }
    let stacked = g.concat_rows(terms);
    g.mean_all(stacked)
}

#[derive(Clone, Copy, Debug)]
pub struct HaogLossNodes {
    pub total: Var,
    pub box_giou: Var,
    pub box_l1: Var,
    pub existence: Var,
    pub contact: Var,
}

impl HaogLossNodes {
    pub fn terms(&self, g: &Graph) -> HaogTerms {
        HaogTerms {
            box_giou: g.value(self.box_giou).item(),
            box_l1: g.value(self.box_l1).item(),
            existence: g.value(self.existence).item(),
            contact: g.value(self.contact).item(),
        }
    }
}

/// Box, existence and contact losses with existence masking.
pub fn loss_haog(g: &mut Graph, head: &HaogHead, gt: &Haog) -> HaogLossNodes {
    let mut giou_terms = Vec::new();
    let mut l1_terms = Vec::new();
    for j in 0..SLOTS {
        let Some(target) = gt.boxes[j].filter(|_| gt.exists[j] == 1) else {
            continue;
        };
        let c = corners(g, head.boxes, j);
        let score = giou_node(g, c, &target);
        let one_minus = g.scale(score, -1.0);
        giou_terms.push(g.add_scalar(one_minus, 1.0));
        let pred = g.concat_cols(&c);
        let want = g.constant(Mat::row_vector(target.to_array().to_vec()));
        let diff = g.sub(pred, want);
        let diff = g.abs(diff);
        l1_terms.push(g.sum_all(diff));
    }
    let box_giou = mean_of(g, &giou_terms);
    let box_l1 = mean_of(g, &l1_terms);

    let targets = gt.exists.iter().map(|&e| f64::from(e)).collect();
    let existence = g.bce_with_logits(head.exist, targets);
    let existence = g.mean_all(existence);

    let mut contact_terms = Vec::new();
    for k in 0..HANDS {
        if !gt.contact_defined(k) {
            continue;
        }
        let row = g.slice_rows(head.contact, k, 1);
        let lse = g.logsumexp_rows(row);
        let picked = g.slice_cols(row, usize::from(gt.contact[k]), 1);
        contact_terms.push(g.sub(lse, picked));
    }
    let contact = mean_of(g, &contact_terms);

    let a = g.add(box_giou, box_l1);
    let b = g.add(existence, contact);
    let total = g.add(a, b);
    HaogLossNodes {
        total,
        box_giou,
        box_l1,
        existence,
        contact,
    }
}

pub fn haog_loss_value(pred: &HaogPrediction, gt: &Haog) -> HaogTerms {
    let mut g = Graph::new();
    let boxes = g.constant(Mat::from_vec(SLOTS, 4, pred.boxes.concat()));
    let exist = g.constant(Mat::from_vec(SLOTS, 1, pred.exist_logits.to_vec()));
    let contact = g.constant(Mat::from_vec(HANDS, 2, pred.contact_logits.concat()));
    let nodes = loss_haog(&mut g, &HaogHead { boxes, exist, contact }, gt);
    nodes.terms(&g)
}

/// Mean absolute difference between `FC(clip tokens)` and frame tokens.
pub fn loss_consistency(g: &mut Graph, params: &Parameters, clip_tokens: Var, frame_tokens: Var) -> Result<Var> {
    if g.shape(clip_tokens) != g.shape(frame_tokens) {
        return Err(Error::Argument(format!(
            "token shapes differ: clip {:?} vs frames {:?}",
            g.shape(clip_tokens),
            g.shape(frame_tokens)
        )));
    }
    let projected = consistency_fc(g, params, clip_tokens);
    let diff = g.sub(projected, frame_tokens);
    let diff = g.abs(diff);
    Ok(g.mean_all(diff))
}

pub fn consistency_loss_value(params: &Parameters, clip_tokens: &Mat, frame_tokens: &Mat) -> Result<f64> {
    let mut g = Graph::new();
    let c = g.constant(clip_tokens.clone());
    let f = g.constant(frame_tokens.clone());
    let l = loss_consistency(&mut g, params, c, f)?;
    Ok(g.value(l).item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::haog::giou;
    use crate::model::ModelConfig;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn video_loss_at_zero_logits_is_ln2() {
        // Frame term: -(1/8)(ln 0.5 + 7 ln 0.5) = ln 2; the osc term at logit 0 is ln 2 too.
        let l = video_loss_value(&[0.0; 8], 3, 0.0, 1).unwrap();
        assert!((l - 2.0 * LN2).abs() < 1e-12);
    }

    #[test]
    fn video_loss_vanishes_when_saturated() {
        let mut logits = vec![-60.0; 8];
        logits[5] = 60.0;
        let l = video_loss_value(&logits, 5, 60.0, 1).unwrap();
        assert!(l < 1e-20);
    }

    #[test]
    fn no_change_clip_uses_only_osc_term() {
        let logits = [0.3, -1.2, 2.0, 0.1];
        let l = video_loss_value(&logits, 2, -0.7, 0).unwrap();
        let osc = video_loss_value(&[0.0], 0, -0.7, 0).unwrap();
        assert_eq!(l, osc);
        // BCE against label 0 is softplus(logit).
        let want = (1.0 + (-0.7f64).exp()).ln();
        assert!((l - want).abs() < 1e-12, "{l} vs {want}");
    }

    #[test]
    fn video_loss_rejects_bad_target() {
        assert!(video_loss_value(&[0.0; 4], 4, 0.0, 1).is_err());
    }

    fn pred_with(boxes: [[f64; 4]; 4], exist: [f64; 4], contact: [[f64; 2]; 2]) -> HaogPrediction {
        HaogPrediction {
            boxes,
            exist_logits: exist,
            contact_logits: contact,
        }
    }

    fn center(b: &BoundingBox) -> [f64; 4] {
        [(b.x1 + b.x2) / 2.0, (b.y1 + b.y2) / 2.0, b.x2 - b.x1, b.y2 - b.y1]
    }

    #[test]
    fn haog_loss_vanishes_on_perfect_prediction() {
        let boxes = [
            BoundingBox::new(0.0, 0.5, 0.25, 0.75),
            BoundingBox::new(0.75, 0.5, 1.0, 0.75),
            BoundingBox::new(0.125, 0.5625, 0.3125, 0.75),
            BoundingBox::new(0.6875, 0.5625, 0.875, 0.75),
        ];
        let gt = Haog {
            boxes: boxes.map(Some),
            exists: [1, 1, 1, 1],
            contact: [1, 0],
        };
        let pred = pred_with(boxes.map(|b| center(&b)), [60.0; 4], [[-60.0, 60.0], [60.0, -60.0]]);
        let t = haog_loss_value(&pred, &gt);
        assert!(t.total() < 1e-20, "{t:?}");
    }

    #[test]
    fn absent_slots_leave_existence_only() {
        let pred = pred_with([[0.3, 0.6, 0.2, 0.1]; 4], [0.5, -1.0, 2.0, 0.0], [[1.0, 2.0], [0.0, 0.0]]);
        let t = haog_loss_value(&pred, &Haog::empty());
        assert_eq!(t.box_giou, 0.0);
        assert_eq!(t.box_l1, 0.0);
        assert_eq!(t.contact, 0.0);
        let softplus = |x: f64| (1.0 + x.exp()).ln();
        let want = (softplus(0.5) + softplus(-1.0) + softplus(2.0) + softplus(0.0)) / 4.0;
        assert!((t.existence - want).abs() < 1e-12);
    }

    #[test]
    fn single_slot_box_term() {
        let mut gt = Haog::empty();
        gt.boxes[0] = Some(BoundingBox::new(0.5, 0.5, 1.0, 1.0));
        gt.exists[0] = 1;
        let mut boxes = [[0.5; 4]; 4];
        boxes[0] = [0.25, 0.25, 0.5, 0.5];
        let t = haog_loss_value(&pred_with(boxes, [0.0; 4], [[0.0; 2]; 2]), &gt);
        assert!((t.box_giou + t.box_l1 - 3.5).abs() < 1e-12, "{t:?}");
    }

    #[test]
    fn giou_node_matches_value_giou() {
        let cases = [
            ([0.1, 0.2, 0.6, 0.7], BoundingBox::new(0.3, 0.1, 0.9, 0.5)),
            ([0.0, 0.0, 0.2, 0.2], BoundingBox::new(0.5, 0.6, 0.9, 0.8)),
            ([0.2, 0.2, 0.4, 0.4], BoundingBox::new(0.1, 0.1, 0.9, 0.9)),
        ];
        for (p, gt) in cases {
            let mut g = Graph::new();
            let vars = p.map(|v| g.scalar(v));
            let s = giou_node(&mut g, vars, &gt);
            let want = giou(&BoundingBox::from_array(p), &gt);
            assert!((g.value(s).item() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn contact_cross_entropy() {
        let mut gt = Haog::empty();
        gt.boxes[1] = Some(BoundingBox::new(0.6, 0.4, 0.8, 0.6));
        gt.boxes[3] = Some(BoundingBox::new(0.5, 0.5, 0.7, 0.7));
        gt.exists = [0, 1, 0, 1];
        gt.contact = [0, 1];
        let pred = pred_with([[0.5; 4]; 4], [0.0; 4], [[5.0, -5.0], [0.2, 1.1]]);
        let t = haog_loss_value(&pred, &gt);
        let want = (0.2f64.exp() + 1.1f64.exp()).ln() - 1.1;
        assert!((t.contact - want).abs() < 1e-12);
    }

    #[test]
    fn consistency_loss_cases() {
        let p = Parameters::init(ModelConfig::toy(), 3).unwrap();
        let tokens = Mat::from_vec(8, 32, (0..256).map(|i| (i as f64 * 0.1).sin()).collect());
        assert_eq!(consistency_loss_value(&p, &tokens, &tokens).unwrap(), 0.0);
        let shifted = tokens.map(|v| v - 0.25);
        assert!((consistency_loss_value(&p, &tokens, &shifted).unwrap() - 0.25).abs() < 1e-12);
        assert!(consistency_loss_value(&p, &tokens, &tokens.slice_rows(0, 4)).is_err());
    }

    #[test]
    fn total_arithmetic() {
        let w = LossWeights::default();
        assert!((weighted_total(0.1, 0.2, 0.3, &w) - 2.3).abs() < 1e-12);
        assert_eq!(weighted_total(0.0, 0.0, 0.0, &w), 0.0);
        let mut g = Graph::new();
        let (c, h, v) = (g.scalar(0.1), g.scalar(0.2), g.scalar(0.3));
        let t = loss_total(&mut g, c, h, v, &w);
        assert_eq!(g.value(t).item(), weighted_total(0.1, 0.2, 0.3, &w));
        let adj = g.backward(t);
        assert_eq!(adj.get(c).unwrap().item(), 10.0);
        let zero_con = LossWeights { lambda_con: 0.0, ..w };
        let mut g = Graph::new();
        let (c, h, v) = (g.scalar(0.1), g.scalar(0.2), g.scalar(0.3));
        let t = loss_total(&mut g, c, h, v, &zero_con);
        assert_eq!(g.backward(t).get(c).unwrap().item(), 0.0);
    }
}
