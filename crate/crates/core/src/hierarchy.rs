//! Rico-style run-time view hierarchies: parsing, candidate selection and
//! background color sampling.

use std::collections::HashMap;

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::imaging::{BBox, Color, RasterImage};

#[derive(Debug, Error)]
pub enum HierarchyError {
    #[error("invalid JSON at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("hierarchy schema: {0}")]
    Schema(String),
    #[error("box {0:?} does not intersect the image")]
    OutsideImage(BBox),
}

/// Which widget family a query is after.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViewKind {
    TextView,
    ImageView,
}

impl ViewKind {
    fn suffix(self) -> &'static str {
        match self {
            ViewKind::TextView => "TextView",
            ViewKind::ImageView => "ImageView",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewNode {
    pub class_name: String,
    /// Screen coordinates as found in the document; may be degenerate, in
    /// which case `visible` is false.
    pub bounds: BBox,
    pub text: Option<String>,
    pub visible: bool,
    pub children: Vec<ViewNode>,
}

impl ViewNode {
    pub fn width(&self) -> i32 {
        self.bounds.width()
    }

    pub fn height(&self) -> i32 {
        self.bounds.height()
    }

    pub fn is_kind(&self, kind: ViewKind) -> bool {
        self.class_name.ends_with(kind.suffix())
    }

    fn has_text(&self) -> bool {
        self.text.as_deref().is_some_and(|t| !t.trim().is_empty())
    }

    /// Depth-first pre-order walk.
    pub fn walk<'a>(&'a self, out: &mut Vec<&'a ViewNode>) {
        out.push(self);
        for child in &self.children {
            child.walk(out);
        }
    }

    fn scaled(&self, sx: f64, sy: f64) -> ViewNode {
        let s = |v: i32, f: f64| crate::imaging::round_half_up(v as f64 * f) as i32;
        ViewNode {
            class_name: self.class_name.clone(),
            bounds: BBox {
                x1: s(self.bounds.x1, sx),
                y1: s(self.bounds.y1, sy),
                x2: s(self.bounds.x2, sx),
                y2: s(self.bounds.y2, sy),
            },
            text: self.text.clone(),
            visible: self.visible,
            children: self.children.iter().map(|c| c.scaled(sx, sy)).collect(),
        }
    }

    fn to_value(&self) -> Value {
        let b = &self.bounds;
        json!({
            "class": self.class_name,
            "bounds": [b.x1, b.y1, b.x2, b.y2],
            "text": self.text,
            "visible-to-user": self.visible,
            "children": self.children.iter().map(ViewNode::to_value).collect::<Vec<_>>(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewTree {
    pub root: ViewNode,
    pub screen_w: u32,
    pub screen_h: u32,
}

impl ViewTree {
    pub fn screen(&self) -> BBox {
        BBox {
            x1: 0,
            y1: 0,
            x2: self.screen_w as i32,
            y2: self.screen_h as i32,
        }
    }

    /// Rescale every coordinate so the screen becomes `width` x `height`
    /// (Rico screenshots are usually stored smaller than the device).
    pub fn scaled_to(&self, width: u32, height: u32) -> ViewTree {
        if width == self.screen_w && height == self.screen_h {
            return self.clone();
        }
        let sx = width as f64 / self.screen_w as f64;
        let sy = height as f64 / self.screen_h as f64;
        let mut root = self.root.scaled(sx, sy);
        root.bounds = BBox {
            x1: 0,
            y1: 0,
            x2: width as i32,
            y2: height as i32,
        };
        ViewTree {
            root,
            screen_w: width,
            screen_h: height,
        }
    }

    pub fn to_json(&self) -> String {
        json!({ "activity": { "root": self.root.to_value() } }).to_string()
    }
}

/// Parse a Rico view-hierarchy document.
///
/// The root node is looked up at `activity.root`, then `root`, and finally the
/// document itself is tried as a node.
pub fn parse_hierarchy(document: &str) -> Result<ViewTree, HierarchyError> {
    let value: Value = serde_json::from_str(document).map_err(|e| HierarchyError::Parse {
        offset: byte_offset(document, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let obj = value
        .as_object()
        .ok_or_else(|| HierarchyError::Schema("document is not an object".into()))?;
    let root_value = obj
        .get("activity")
        .and_then(|a| a.get("root"))
        .or_else(|| obj.get("root"))
        .or_else(|| (obj.contains_key("bounds") || obj.contains_key("class")).then_some(&value))
        .ok_or_else(|| HierarchyError::Schema("missing root node".into()))?;
    let root = parse_node(root_value)?;
    let b = root.bounds;
    if b.x2 < 1 || b.y2 < 1 || b.x1 >= b.x2 || b.y1 >= b.y2 {
        return Err(HierarchyError::Schema(format!(
            "root bounds {:?} do not describe a screen",
            [b.x1, b.y1, b.x2, b.y2]
        )));
    }
    Ok(ViewTree {
        screen_w: b.x2 as u32,
        screen_h: b.y2 as u32,
        root,
    })
}

fn byte_offset(doc: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = doc.split_inclusive('\n').take(line - 1).map(str::len).sum();
    (line_start + column.saturating_sub(1)).min(doc.len())
}

fn parse_node(value: &Value) -> Result<ViewNode, HierarchyError> {
    let obj = value
        .as_object()
        .ok_or_else(|| HierarchyError::Schema("view node is not an object".into()))?;
    let class_name = obj
        .get("class")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    let (bounds, bounds_ok) = parse_bounds(obj);
    let text = obj.get("text").and_then(Value::as_str).map(str::to_string);
    let shown = obj
        .get("visibility")
        .and_then(Value::as_str)
        .is_none_or(|v| v == "visible");
    let to_user = obj
        .get("visible-to-user")
        .and_then(Value::as_bool)
        .unwrap_or(true);
    let children = match obj.get("children") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(items)) => items
            .iter()
            .filter(|c| !c.is_null())
            .map(parse_node)
            .collect::<Result<_, _>>()?,
        Some(_) => return Err(HierarchyError::Schema("children is not an array".into())),
    };
    Ok(ViewNode {
        class_name,
        bounds,
        text,
        visible: shown && to_user && bounds_ok,
        children,
    })
}

fn parse_bounds(obj: &Map<String, Value>) -> (BBox, bool) {
    let coords: Option<Vec<i32>> = obj.get("bounds").and_then(Value::as_array).map(|a| {
        a.iter()
            .filter_map(|v| v.as_f64().map(|f| f.round() as i32))
            .collect()
    });
    match coords.as_deref() {
        Some(&[x1, y1, x2, y2]) => {
            let b = BBox { x1, y1, x2, y2 };
            (b, x1 >= 0 && y1 >= 0 && x1 < x2 && y1 < y2)
        }
        _ => (
            BBox {
                x1: 0,
                y1: 0,
                x2: 0,
                y2: 0,
            },
            false,
        ),
    }
}

/// Visible views of `kind` with well-formed on-screen bounds, in pre-order.
/// Text views must also carry non-blank text.
pub fn collect_views(tree: &ViewTree, kind: ViewKind) -> Vec<&ViewNode> {
    let mut all = Vec::new();
    tree.root.walk(&mut all);
    let screen = tree.screen();
    all.into_iter()
        .filter(|n| n.visible && n.is_kind(kind) && screen.contains_box(&n.bounds))
        .filter(|n| kind != ViewKind::TextView || n.has_text())
        .collect()
}

/// Most frequent color on the one-pixel perimeter of `bbox` clipped to the
/// image; ties go to the lowest packed RGB value.
pub fn sample_background_color(img: &RasterImage, bbox: &BBox) -> Result<Color, HierarchyError> {
    let r = bbox
        .intersect(&img.bounds())
        .ok_or(HierarchyError::OutsideImage(*bbox))?;
    let mut counts: HashMap<Color, u32> = HashMap::new();
    let mut count = |x: i32, y: i32| *counts.entry(img.pixel(x as u32, y as u32)).or_default() += 1;
    for x in r.x1..r.x2 {
        count(x, r.y1);
        if r.y2 - 1 > r.y1 {
            count(x, r.y2 - 1);
        }
    }
    for y in r.y1 + 1..r.y2 - 1 {
        count(r.x1, y);
        if r.x2 - 1 > r.x1 {
            count(r.x2 - 1, y);
        }
    }
    Ok(counts
        .into_iter()
        .max_by(|(ca, na), (cb, nb)| na.cmp(nb).then(cb.packed().cmp(&ca.packed())))
        .map(|(c, _)| c)
        .expect("perimeter of a non-empty box has at least one pixel"))
}
