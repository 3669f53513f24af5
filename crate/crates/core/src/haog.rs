//! Hand-object graphs: two hands, the two objects they manipulate, and a
//! contact edge per hand.
//!
//! Slots are fixed-role: `[left hand, right hand, left-hand object,
//! right-hand object]`. Contact `k` joins hand `k` with object `k + 2`.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const SLOTS: usize = 4;
pub const HANDS: usize = 2;

pub const SLOT_NAMES: [&str; SLOTS] = ["left hand", "right hand", "left object", "right object"];

/// Axis-aligned box in image-fraction coordinates, `(x1, y1)` top-left.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BoundingBox { x1, y1, x2, y2 }
    }

    pub fn from_array(c: [f64; 4]) -> Self {
        BoundingBox::new(c[0], c[1], c[2], c[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    /// Box from center/size parameters, clipped to the unit square.
    pub fn from_center_size(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        let clip = |v: f64| v.clamp(0.0, 1.0);
        BoundingBox::new(
            clip(cx - 0.5 * w),
            clip(cy - 0.5 * h),
            clip(cx + 0.5 * w),
            clip(cy + 0.5 * h),
        )
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1).max(0.0) * (self.y2 - self.y1).max(0.0)
    }

    pub fn is_valid(&self) -> bool {
        let c = self.to_array();
        c.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v))
            && self.x1 <= self.x2
            && self.y1 <= self.y2
    }

    pub fn intersection(&self, other: &BoundingBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        w.max(0.0) * h.max(0.0)
    }

    pub fn hull(&self, other: &BoundingBox) -> BoundingBox {
        BoundingBox::new(
            self.x1.min(other.x1),
            self.y1.min(other.y1),
            self.x2.max(other.x2),
            self.y2.max(other.y2),
        )
    }
}

/// Intersection over union; 0 when both boxes are empty.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection(b);
    let union = a.area() + b.area() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Generalized IoU: `IoU − (|hull| − |union|) / |hull|`.
///
/// A zero-area hull (two empty boxes at one point) scores 0.
pub fn giou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection(b);
    let union = a.area() + b.area() - inter;
    let hull = a.hull(b).area();
    if hull <= 0.0 {
        return 0.0;
    }
    let iou = if union > 0.0 { inter / union } else { 0.0 };
    iou - (hull - union) / hull
}

#[derive(Clone, Debug, PartialEq)]
pub struct Haog {
    pub boxes: [Option<BoundingBox>; SLOTS],
    pub exists: [u8; SLOTS],
    pub contact: [u8; HANDS],
}

impl Haog {
    pub fn empty() -> Self {
        Haog {
            boxes: [None; SLOTS],
            exists: [0; SLOTS],
            contact: [0; HANDS],
        }
    }

    /// Whether contact `k` is defined, i.e. hand `k` and object `k + 2` both exist.
    pub fn contact_defined(&self, k: usize) -> bool {
        self.exists[k] == 1 && self.exists[k + 2] == 1
    }
}

/// Outcome of [`validate_haog`].
#[derive(Clone, Debug, PartialEq)]
pub enum Verdict {
    Ok,
    Violations(Vec<String>),
}

impl Verdict {
    pub fn is_ok(&self) -> bool {
        matches!(self, Verdict::Ok)
    }

    pub fn violations(&self) -> &[String] {
        match self {
            Verdict::Ok => &[],
            Verdict::Violations(v) => v,
        }
    }
}

/// Lists every broken invariant of `h`.
pub fn validate_haog(h: &Haog) -> Verdict {
    let mut out = Vec::new();
    for (j, &e) in h.exists.iter().enumerate() {
        if e > 1 {
            out.push(format!("exists[{j}] must be 0 or 1"));
        }
        match (&h.boxes[j], e) {
            (None, 1) => out.push(format!("boxes[{j}] missing")),
            (Some(_), 0) => out.push(format!("boxes[{j}] present but exists[{j}] = 0")),
            _ => {}
        }
        if let Some(b) = &h.boxes[j] {
            if !b.is_valid() {
                out.push(format!("boxes[{j}] is not a valid box"));
            }
        }
    }
    for (k, &c) in h.contact.iter().enumerate() {
        if c > 1 {
            out.push(format!("contact[{k}] must be 0 or 1"));
        }
        if c == 1 {
            if h.exists[k] != 1 {
                out.push(format!("contact[{k}] requires exists[{k}]"));
            }
            if h.exists[k + 2] != 1 {
                out.push(format!("contact[{k}] requires exists[{}]", k + 2));
            }
        }
    }
    if out.is_empty() {
        Verdict::Ok
    } else {
        Verdict::Violations(out)
    }
}

fn parse_flags<const N: usize>(v: &Value, field: &str) -> Result<[u8; N]> {
    let arr = v
        .get(field)
        .and_then(Value::as_array)
        .ok_or_else(|| Error::parse(field, "expected an array"))?;
    if arr.len() != N {
        return Err(Error::parse(field, format!("expected {N} entries, got {}", arr.len())));
    }
    let mut out = [0u8; N];
    for (i, x) in arr.iter().enumerate() {
        out[i] = match x.as_u64() {
            Some(0) => 0,
            Some(1) => 1,
            _ => return Err(Error::parse(format!("{field}[{i}]"), "expected 0 or 1")),
        };
    }
    Ok(out)
}

/// Parses one annotation line into `(image path, graph)`.
pub fn parse_haog_record(line: &str) -> Result<(String, Haog)> {
    let v: Value = serde_json::from_str(line).map_err(|e| Error::parse("record", e.to_string()))?;
    if !v.is_object() {
        return Err(Error::parse("record", "expected a JSON object"));
    }
    let image = v
        .get("image")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::parse("image", "expected a string"))?
        .to_string();

    let raw_boxes = v
        .get("boxes")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::parse("boxes", "expected an array"))?;
    if raw_boxes.len() != SLOTS {
        return Err(Error::parse("boxes", format!("expected {SLOTS} entries, got {}", raw_boxes.len())));
    }
    let mut boxes = [None; SLOTS];
    for (j, b) in raw_boxes.iter().enumerate() {
        let field = format!("boxes[{j}]");
        if b.is_null() {
            continue;
        }
        let coords = b
            .as_array()
            .filter(|a| a.len() == 4)
            .ok_or_else(|| Error::parse(&field, "expected [x1, y1, x2, y2] or null"))?;
        let mut c = [0.0; 4];
        for (i, x) in coords.iter().enumerate() {
            c[i] = x
                .as_f64()
                .ok_or_else(|| Error::parse(format!("{field}[{i}]"), "expected a number"))?;
            if !(0.0..=1.0).contains(&c[i]) {
                return Err(Error::parse(format!("{field}[{i}]"), format!("{} outside [0, 1]", c[i])));
            }
        }
        let bb = BoundingBox::from_array(c);
        if !bb.is_valid() {
            return Err(Error::parse(&field, "corners out of order"));
        }
        boxes[j] = Some(bb);
    }

    let exists = parse_flags::<SLOTS>(&v, "exists")?;
    let contact = parse_flags::<HANDS>(&v, "contact")?;
    let h = Haog { boxes, exists, contact };
    if let Verdict::Violations(list) = validate_haog(&h) {
        let first = &list[0];
        let field = first.split_whitespace().next().unwrap_or("record");
        return Err(Error::parse(field, first.clone()));
    }
    Ok((image, h))
}

/// Emits one annotation line. Coordinates are printed with six decimals.
pub fn serialize_haog_record(path: &str, h: &Haog) -> Result<String> {
    if let Verdict::Violations(list) = validate_haog(h) {
        return Err(Error::InvalidHaog(list));
    }
    let boxes: Vec<String> = h
        .boxes
        .iter()
        .map(|b| match b {
            None => "null".to_string(),
            Some(b) => format!("[{:.6},{:.6},{:.6},{:.6}]", b.x1, b.y1, b.x2, b.y2),
        })
        .collect();
    let flags = |f: &[u8]| f.iter().map(u8::to_string).collect::<Vec<_>>().join(",");
    Ok(format!(
        "{{\"image\":{},\"boxes\":[{}],\"exists\":[{}],\"contact\":[{}]}}",
        Value::String(path.to_string()),
        boxes.join(","),
        flags(&h.exists),
        flags(&h.contact),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full() -> Haog {
        Haog {
            boxes: [
                Some(BoundingBox::new(0.0, 0.5, 0.2, 0.8)),
                Some(BoundingBox::new(0.8, 0.5, 1.0, 0.8)),
                Some(BoundingBox::new(0.15, 0.55, 0.3, 0.7)),
                Some(BoundingBox::new(0.7, 0.55, 0.85, 0.7)),
            ],
            exists: [1, 1, 1, 1],
            contact: [1, 1],
        }
    }

    #[test]
    fn full_graph_validates() {
        assert_eq!(validate_haog(&full()), Verdict::Ok);
    }

    #[test]
    fn partial_graph_with_defined_contact_validates() {
        let mut h = full();
        h.boxes[1] = None;
        h.boxes[3] = None;
        h.exists = [1, 0, 1, 0];
        h.contact = [1, 0];
        assert!(validate_haog(&h).is_ok());
    }

    #[test]
    fn contact_without_hand_is_reported() {
        let mut h = full();
        h.boxes[0] = None;
        h.exists = [0, 1, 1, 1];
        h.contact = [1, 1];
        let v = validate_haog(&h);
        assert!(v.violations().contains(&"contact[0] requires exists[0]".to_string()), "{v:?}");
    }

    #[test]
    fn every_violation_is_listed() {
        let h = Haog {
            boxes: [None, Some(BoundingBox::new(0.5, 0.5, 0.4, 0.6)), None, None],
            exists: [1, 0, 0, 0],
            contact: [1, 1],
        };
        let v = validate_haog(&h);
        let list = v.violations();
        assert!(list.contains(&"boxes[0] missing".to_string()));
        assert!(list.iter().any(|s| s.starts_with("boxes[1] present")));
        assert!(list.iter().any(|s| s == "boxes[1] is not a valid box"));
        assert!(list.contains(&"contact[0] requires exists[2]".to_string()));
        assert!(list.contains(&"contact[1] requires exists[1]".to_string()));
    }

    #[test]
    fn giou_hand_cases() {
        let a = BoundingBox::new(0.1, 0.1, 0.5, 0.5);
        assert!((giou(&a, &a) - 1.0).abs() < 1e-12);
        let a = BoundingBox::new(0.0, 0.0, 0.5, 0.5);
        let b = BoundingBox::new(0.5, 0.5, 1.0, 1.0);
        assert!((giou(&a, &b) + 0.5).abs() < 1e-12);
        let a = BoundingBox::new(0.0, 0.0, 1.0, 1.0);
        let b = BoundingBox::new(0.0, 0.0, 0.5, 0.5);
        assert!((giou(&a, &b) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn degenerate_hull_scores_zero() {
        let p = BoundingBox::new(0.3, 0.3, 0.3, 0.3);
        assert_eq!(giou(&p, &p), 0.0);
    }

    #[test]
    fn parse_full_record() {
        let line = r#"{"image": "a.svt", "boxes": [[0,0.5,0.2,0.8],[0.8,0.5,1,0.8],[0.15,0.55,0.3,0.7],[0.7,0.55,0.85,0.7]], "exists": [1,1,1,1], "contact": [1,0]}"#;
        let (path, h) = parse_haog_record(line).unwrap();
        assert_eq!(path, "a.svt");
        assert_eq!(h.exists, [1, 1, 1, 1]);
        assert_eq!(h.contact, [1, 0]);
        assert_eq!(h.boxes[2], Some(BoundingBox::new(0.15, 0.55, 0.3, 0.7)));
    }

    #[test]
    fn parse_reports_missing_box() {
        let line = r#"{"image": "a", "boxes": [[0,0,0.1,0.1],null,null,null], "exists": [1,1,0,0], "contact": [0,0]}"#;
        let err = parse_haog_record(line).unwrap_err();
        match err {
            Error::Parse { field, message } => {
                assert_eq!(field, "boxes[1]");
                assert_eq!(message, "boxes[1] missing");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_bad_fields() {
        let cases = [
            (r#"not json"#, "record"),
            (r#"{"boxes": [null,null,null,null], "exists": [0,0,0,0], "contact": [0,0]}"#, "image"),
            (r#"{"image": "a", "boxes": [null,null,null], "exists": [0,0,0,0], "contact": [0,0]}"#, "boxes"),
            (r#"{"image": "a", "boxes": [[0,0,1.5,1],null,null,null], "exists": [1,0,0,0], "contact": [0,0]}"#, "boxes[0][2]"),
            (r#"{"image": "a", "boxes": [null,null,null,null], "exists": [0,2,0,0], "contact": [0,0]}"#, "exists[1]"),
            (r#"{"image": "a", "boxes": [null,null,null,null], "exists": [0,0,0,0]}"#, "contact"),
        ];
        for (line, want) in cases {
            match parse_haog_record(line) {
                Err(Error::Parse { field, .. }) => assert_eq!(field, want, "{line}"),
                other => panic!("{line}: {other:?}"),
            }
        }
    }

    #[test]
    fn serialize_empty_graph() {
        let line = serialize_haog_record("x.svt", &Haog::empty()).unwrap();
        assert_eq!(
            line,
            r#"{"image":"x.svt","boxes":[null,null,null,null],"exists":[0,0,0,0],"contact":[0,0]}"#
        );
    }

    #[test]
    fn serialize_six_decimals() {
        let mut h = Haog::empty();
        h.boxes[0] = Some(BoundingBox::new(1.0 / 3.0, 0.0, 0.5, 1.0));
        h.exists[0] = 1;
        let line = serialize_haog_record("p", &h).unwrap();
        assert!(line.contains("[0.333333,0.000000,0.500000,1.000000]"), "{line}");
    }

    #[test]
    fn serialize_refuses_invalid() {
        let mut h = Haog::empty();
        h.contact[0] = 1;
        assert!(matches!(serialize_haog_record("p", &h), Err(Error::InvalidHaog(_))));
    }

    #[test]
    fn center_size_conversion() {
        let b = BoundingBox::from_center_size(0.5, 0.5, 0.5, 0.5);
        assert_eq!(b, BoundingBox::new(0.25, 0.25, 0.75, 0.75));
        let b = BoundingBox::from_center_size(0.9, 0.1, 0.5, 0.5);
        assert!(b.is_valid());
        assert_eq!(b.x2, 1.0);
        assert_eq!(b.y1, 0.0);
    }
}
