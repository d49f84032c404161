//! Procedurally generated app screens with matching view hierarchies.
//!
//! Every app gets a colour theme; each of its screens stacks a status bar,
//! text rows and image rows. Text is drawn small and vertically centred in
//! its view; image views hold colourful patterns.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::augmentor::derive_seed;
use crate::hierarchy::{ViewNode, ViewTree};
use crate::imaging::{save_png, BBox, Color, ImagingError, RasterImage};

pub const TEXT_CLASS: &str = "android.widget.TextView";
pub const IMAGE_CLASS: &str = "android.widget.ImageView";
const GROUP_CLASS: &str = "android.widget.LinearLayout";
const ROOT_CLASS: &str = "com.android.internal.policy.DecorView";

/// Glyph cell height of ordinary label text.
pub const LABEL_CELL: u32 = 14;
const MARGIN: i32 = 6;
const STATUS_BAR: i32 = 12;

const WORDS: &[&str] = &[
    "Settings", "Profile", "Save", "Cancel", "Wi-Fi", "Music", "Photos", "Account", "Sign in", "Share",
    "Next", "Orders", "Inbox", "Search", "Help", "Cart", "Maps", "Notes", "Alarm", "Play", "Done", "Edit",
    "Home", "News", "Login", "Menu", "Total", "Price", "Sync", "About",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScreen {
    pub source_id: String,
    pub image: RasterImage,
    pub tree: ViewTree,
}

#[derive(Debug, Clone, Copy)]
struct Theme {
    background: Color,
    card: Color,
    bar: Color,
    ink: Color,
}

fn theme(app: usize, seed: u64) -> Theme {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("theme{app}")));
    let light = |rng: &mut ChaCha8Rng| Color::new(rng.random_range(215..=255), rng.random_range(215..=255), rng.random_range(215..=255));
    let background = light(&mut rng);
    let card = if rng.random_bool(0.5) { background } else { light(&mut rng) };
    let bar = Color::new(rng.random_range(20..160), rng.random_range(20..160), rng.random_range(60..200));
    let ink = Color::new(rng.random_range(0..60), rng.random_range(0..60), rng.random_range(0..60));
    Theme {
        background,
        card,
        bar,
        ink,
    }
}

pub fn source_id(app: usize, screen: usize) -> String {
    format!("app{app:04}_s{screen:02}")
}

fn leaf(class: &str, bounds: BBox, text: Option<String>) -> ViewNode {
    ViewNode {
        class_name: class.to_string(),
        bounds,
        text,
        visible: true,
        children: Vec::new(),
    }
}

fn bbox(x1: i32, y1: i32, x2: i32, y2: i32) -> BBox {
    BBox::new(x1, y1, x2, y2).expect("layout produces well-formed boxes")
}

fn label(rng: &mut ChaCha8Rng, max_chars: usize) -> String {
    let mut s = WORDS[rng.random_range(0..WORDS.len())].to_string();
    if rng.random_bool(0.4) {
        let more = WORDS[rng.random_range(0..WORDS.len())];
        if s.len() + 1 + more.len() <= max_chars {
            s.push(' ');
            s.push_str(more);
        }
    }
    s.truncate(max_chars.max(1));
    s
}

fn draw_label(img: &mut RasterImage, view: &BBox, text: &str, theme: &Theme) {
    img.fill_rect_mut(*view, theme.card);
    let y = view.y1 + (view.height() - LABEL_CELL as i32) / 2;
    let _ = img.draw_text_mut((view.x1 + 4, y), text, theme.ink, LABEL_CELL, Some(*view));
}

fn draw_picture(img: &mut RasterImage, view: &BBox, rng: &mut ChaCha8Rng) {
    let a = Color::new(rng.random(), rng.random(), rng.random());
    let b = Color::new(rng.random(), rng.random(), rng.random());
    let (w, h) = (view.width().max(1) as f64, view.height().max(1) as f64);
    let stripe = rng.random_range(4..10);
    for y in view.y1..view.y2 {
        for x in view.x1..view.x2 {
            let t = ((x - view.x1) as f64 / w + (y - view.y1) as f64 / h) / 2.0;
            let mix = |p: u8, q: u8| (p as f64 * (1.0 - t) + q as f64 * t) as u8;
            let mut c = Color::new(mix(a.r, b.r), mix(a.g, b.g), mix(a.b, b.b));
            if ((x - view.x1) + (y - view.y1)) / stripe % 3 == 0 {
                c = Color::new(255 - c.r, 255 - c.g, c.b / 2);
            }
            img.put(x as u32, y as u32, c);
        }
    }
    let (cx, cy) = (
        rng.random_range(view.x1..view.x2),
        rng.random_range(view.y1..view.y2),
    );
    let r = rng.random_range(5..14);
    let dot = Color::new(rng.random(), rng.random(), rng.random());
    for y in view.y1..view.y2 {
        for x in view.x1..view.x2 {
            if (x - cx).pow(2) + (y - cy).pow(2) <= r * r {
                img.put(x as u32, y as u32, dot);
            }
        }
    }
}

/// One screen of app `app`. Always contains at least one TextView of
/// height >= 32 and one ImageView.
pub fn synth_screen(app: usize, screen: usize, seed: u64, width: u32, height: u32) -> SynthScreen {
    let id = source_id(app, screen);
    let th = theme(app, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &id));
    let (w, h) = (width as i32, height as i32);
    let mut img = RasterImage::new(width, height, th.background).expect("non-empty screen");
    img.fill_rect_mut(bbox(0, 0, w, STATUS_BAR), th.bar);

    let max_chars = ((w - 2 * MARGIN - 8) / 12).max(1) as usize;
    let mut rows = Vec::new();
    let mut y = STATUS_BAR + MARGIN;
    let mut row = 0;
    let (mut has_text, mut has_image) = (false, false);
    loop {
        let want_image = match (has_text, has_image) {
            (true, false) if row >= 1 => true,
            (false, _) if row >= 1 => false,
            _ => rng.random_bool(0.45),
        };
        let row_h = if want_image { rng.random_range(40..=56) } else { rng.random_range(32..=40) };
        if y + row_h > h - MARGIN {
            break;
        }
        if want_image {
            let iw = rng.random_range(40..=((w - 2 * MARGIN) * 2 / 3).max(41));
            let iv = bbox(MARGIN, y, MARGIN + iw, y + row_h);
            draw_picture(&mut img, &iv, &mut rng);
            let mut children = vec![leaf(IMAGE_CLASS, iv, None)];
            let tx = iv.x2 + MARGIN;
            if w - MARGIN - tx >= 30 {
                let th_ = 32.min(row_h);
                let ty = y + (row_h - th_) / 2;
                let tv = bbox(tx, ty, w - MARGIN, ty + th_);
                let text = label(&mut rng, ((tv.width() - 8) / 12).max(1) as usize);
                draw_label(&mut img, &tv, &text, &th);
                children.push(leaf(TEXT_CLASS, tv, Some(text)));
                has_text = true;
            }
            rows.push(ViewNode {
                class_name: GROUP_CLASS.into(),
                bounds: bbox(MARGIN, y, w - MARGIN, y + row_h),
                text: None,
                visible: true,
                children,
            });
            has_image = true;
        } else {
            let tv = bbox(MARGIN, y, w - MARGIN, y + row_h);
            let text = label(&mut rng, max_chars);
            draw_label(&mut img, &tv, &text, &th);
            rows.push(leaf(TEXT_CLASS, tv, Some(text)));
            has_text = true;
        }
        y += row_h + MARGIN;
        row += 1;
    }
    let tree = ViewTree {
        root: ViewNode {
            class_name: ROOT_CLASS.into(),
            bounds: bbox(0, 0, w, h),
            text: None,
            visible: true,
            children: rows,
        },
        screen_w: width,
        screen_h: height,
    };
    SynthScreen {
        source_id: id,
        image: img,
        tree,
    }
}

/// Write `<id>.png` and `<id>.json` for `screens` screens of every app in
/// `apps`. Returns the source ids in generation order.
pub fn write_corpus(
    dir: &Path,
    apps: std::ops::Range<usize>,
    screens: usize,
    seed: u64,
    width: u32,
    height: u32,
) -> Result<Vec<String>, ImagingError> {
    std::fs::create_dir_all(dir).map_err(|source| ImagingError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut ids = Vec::new();
    for app in apps {
        for s in 0..screens {
            let scr = synth_screen(app, s, seed, width, height);
            save_png(&scr.image, dir.join(format!("{}.png", scr.source_id)))?;
            let json_path = dir.join(format!("{}.json", scr.source_id));
            std::fs::write(&json_path, scr.tree.to_json()).map_err(|source| ImagingError::Io {
                path: json_path.display().to_string(),
                source,
            })?;
            ids.push(scr.source_id);
        }
    }
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::{collect_views, parse_hierarchy, ViewKind};

    #[test]
    fn screens_are_deterministic_and_distinct() {
        let a = synth_screen(3, 1, 9, 128, 192);
        assert_eq!(a, synth_screen(3, 1, 9, 128, 192));
        assert_ne!(a.image, synth_screen(3, 2, 9, 128, 192).image);
        assert_eq!(a.source_id, "app0003_s01");
    }

    #[test]
    fn every_screen_has_both_view_kinds() {
        for app in 0..20 {
            let s = synth_screen(app, 0, 1, 128, 192);
            let texts = collect_views(&s.tree, ViewKind::TextView);
            assert!(texts.iter().any(|v| v.height() >= 32), "app {app}");
            assert!(!collect_views(&s.tree, ViewKind::ImageView).is_empty(), "app {app}");
            for v in texts {
                assert!(s.tree.screen().contains_box(&v.bounds));
            }
        }
    }

    #[test]
    fn hierarchy_survives_json() {
        let s = synth_screen(1, 1, 2, 128, 192);
        let back = parse_hierarchy(&s.tree.to_json()).unwrap();
        assert_eq!(back, s.tree);
    }
}
