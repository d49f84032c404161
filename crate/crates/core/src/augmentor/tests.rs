use proptest::prelude::*;

use super::*;
use crate::hierarchy::parse_hierarchy;
use crate::imaging::draw_text;

fn node(class: &str, bounds: [i32; 4], text: Option<&str>) -> ViewNode {
    ViewNode {
        class_name: class.to_string(),
        bounds: BBox::try_from(bounds).unwrap(),
        text: text.map(str::to_string),
        visible: true,
        children: vec![],
    }
}

fn text_node(bounds: [i32; 4], text: &str) -> ViewNode {
    node("android.widget.TextView", bounds, Some(text))
}

fn tree(w: i32, h: i32, children: Vec<ViewNode>) -> ViewTree {
    ViewTree {
        root: ViewNode {
            class_name: "android.widget.FrameLayout".into(),
            bounds: BBox::new(0, 0, w, h).unwrap(),
            text: None,
            visible: true,
            children,
        },
        screen_w: w as u32,
        screen_h: h as u32,
    }
}

fn changed_region(a: &RasterImage, b: &RasterImage) -> Option<BBox> {
    let mut acc: Option<BBox> = None;
    for y in 0..a.height() {
        for x in 0..a.width() {
            if a.pixel(x, y) != b.pixel(x, y) {
                let px = BBox::new(x as i32, y as i32, x as i32 + 1, y as i32 + 1).unwrap();
                acc = Some(acc.map_or(px, |r| r.union(&px)));
            }
        }
    }
    acc
}

fn screen(w: u32, h: u32) -> RasterImage {
    RasterImage::from_fn(w, h, |x, y| Color::new((x % 7 * 30) as u8, (y % 5 * 40) as u8, 90)).unwrap()
}

#[test]
fn occlusion_upper_half() {
    let view = text_node([100, 200, 300, 240], "Hello");
    let img = RasterImage::new(400, 300, Color::WHITE).unwrap();
    let mut draws = ReplayDraws::new(vec![0.5]);
    let (out, region) = occlude_component(&img, &view, Color::RED, &mut draws, 0.1).unwrap();
    assert_eq!(region, BBox::new(100, 200, 300, 220).unwrap());
    assert_eq!(changed_region(&img, &out), Some(region));
}

#[test]
fn occlusion_lower_half() {
    // y2 + h * rand = 240 + 40 * -0.5 = 220
    let view = text_node([100, 200, 300, 240], "Hello");
    let img = RasterImage::new(400, 300, Color::WHITE).unwrap();
    let mut draws = ReplayDraws::new(vec![-0.5]);
    let (_, region) = occlude_component(&img, &view, Color::RED, &mut draws, 0.1).unwrap();
    assert_eq!(region, BBox::new(100, 220, 300, 240).unwrap());
}

#[test]
fn occlusion_rejects_tiny_fractions() {
    let view = text_node([100, 200, 300, 240], "Hello");
    let img = RasterImage::new(400, 300, Color::WHITE).unwrap();
    let mut draws = ReplayDraws::new(vec![0.02, 0.7]);
    let (_, region) = occlude_component(&img, &view, Color::RED, &mut draws, 0.1).unwrap();
    // round(40 * 0.7) = 28
    assert_eq!(region, BBox::new(100, 200, 300, 228).unwrap());
    assert_eq!(draws.into_log(), vec![0.02, 0.7]);
}

#[test]
fn overlap_origin_follows_xrand() {
    let view = text_node([50, 100, 250, 130], "Save");
    let img = RasterImage::new(400, 300, Color::WHITE).unwrap();
    let cfg = AugmentConfig::default();
    for (xrand, x) in [(60.0, 190), (0.0, 250), (100.0, 150)] {
        let mut draws = ReplayDraws::new(vec![xrand]);
        let (out, region) = overlap_text(&img, &view, Color::WHITE, &mut draws, &cfg).unwrap();
        assert_eq!((region.x1, region.y1, region.height()), (x, 100, 30));
        let (expected, _) = draw_text(&img, (x, 100), "Save", Color::BLACK, 30).unwrap();
        assert_eq!(out, expected);
    }
}

#[test]
fn overlap_retries_when_off_canvas() {
    // Negative xrand pushes the copy right of x2; with the view at the right
    // edge the first draw lands off-screen.
    let view = text_node([60, 10, 100, 30], "Go");
    let img = RasterImage::new(100, 50, Color::WHITE).unwrap();
    let cfg = AugmentConfig::default();
    let mut draws = ReplayDraws::new(vec![-10.0, 15.0]);
    let (_, region) = overlap_text(&img, &view, Color::WHITE, &mut draws, &cfg).unwrap();
    assert_eq!(region.x1, 85);

    let mut draws = ReplayDraws::new(vec![-1.0; 8]);
    assert!(matches!(
        overlap_text(&img, &view, Color::WHITE, &mut draws, &cfg),
        Err(AugmentError::NoCandidate { .. })
    ));
}

#[test]
fn missing_image_anchors_icon_at_view_center() {
    let view = node("android.widget.ImageView", [0, 0, 100, 100], None);
    let img = screen(200, 200);
    let icon = RasterImage::from_fn(40, 40, |x, y| Color::new(x as u8 * 6, y as u8 * 6, 200)).unwrap();
    let bg = Color::new(10, 20, 30);
    let (out, region) = missing_image(&img, &view, bg, &icon, false).unwrap();
    assert_eq!(region, BBox::new(0, 0, 100, 100).unwrap());
    let scaled = resize_normalize(&icon, 50, 50).unwrap();
    for y in 0..100 {
        for x in 0..100 {
            let expected = if x >= 50 && y >= 50 { scaled.pixel(x - 50, y - 50) } else { bg };
            assert_eq!(out.pixel(x, y), expected);
        }
    }
    assert!(changed_region(&img, &out).is_some_and(|c| region.contains_box(&c)));

    let (centered, _) = missing_image(&img, &view, bg, &icon, true).unwrap();
    assert_eq!(centered.pixel(25, 25), scaled.pixel(0, 0));
}

#[test]
fn missing_image_clips_at_screen_edge() {
    let view = node("android.widget.ImageView", [80, 80, 120, 120], None);
    let img = screen(100, 100);
    let (out, region) = missing_image(&img, &view, Color::WHITE, &default_icon(), false).unwrap();
    assert_eq!(region, BBox::new(80, 80, 100, 100).unwrap());
    assert!(changed_region(&img, &out).is_some_and(|c| region.contains_box(&c)));
}

#[test]
fn default_icon_is_used_without_icons() {
    let t = tree(200, 200, vec![node("android.widget.ImageView", [20, 20, 68, 68], None)]);
    let img = screen(200, 200);
    let aug = Augmentor::default();
    let (out, record) = aug.augment(&img, &t, BugCategory::MissingImage, &[], 5, "s").unwrap();
    assert_eq!(record.rand_draws.len(), 1, "only the view pick is drawn");
    let icon = resize_normalize(&default_icon(), 24, 24).unwrap();
    assert_eq!(out.pixel(44, 44), icon.pixel(0, 0));
    assert_eq!(out.pixel(67, 67), icon.pixel(23, 23));
}

#[test]
fn null_value_rewrites_the_view() {
    let view = text_node([10, 10, 130, 38], "Price");
    let img = RasterImage::new(200, 60, Color::WHITE).unwrap();
    let (out, region) = null_value(&img, &view, Color::WHITE).unwrap();
    assert_eq!(region, BBox::new(10, 10, 130, 38).unwrap());
    let (expected, drawn) = draw_text(&img, (10, 10), "null", Color::BLACK, 28).unwrap();
    assert_eq!(drawn.height(), 28);
    assert_eq!(out, expected);

    let dark = Color::new(20, 20, 20);
    let img = RasterImage::new(200, 60, dark).unwrap();
    let (out, _) = null_value(&img, &view, dark).unwrap();
    assert!(out.as_raw().chunks(3).any(|p| p == [255, 255, 255]));
    assert!(out.as_raw().chunks(3).all(|p| p == [255, 255, 255] || p == [20, 20, 20]));
}

#[test]
fn null_value_small_view_uses_full_cell_height() {
    let view = text_node([0, 0, 60, 12], "x");
    let img = RasterImage::new(80, 20, Color::WHITE).unwrap();
    let (out, _) = null_value(&img, &view, Color::WHITE).unwrap();
    // Scale floor(12/7) = 1: the first 'l' (third glyph) stem sits at x = 12 + 2.
    assert!((0..12).all(|y| out.pixel(14, y) == Color::BLACK));
    assert!((12..20).all(|y| out.pixel(14, y) == Color::WHITE));
}

#[test]
fn augment_errors() {
    let t = tree(200, 200, vec![text_node([0, 0, 100, 40], "Hi")]);
    let img = screen(200, 200);
    let aug = Augmentor::default();
    assert!(matches!(
        aug.augment(&img, &t, BugCategory::MissingImage, &[], 1, "s"),
        Err(AugmentError::NoCandidate { kind: ViewKind::ImageView, .. })
    ));
    assert!(matches!(
        aug.augment(&img, &t, BugCategory::BlurredScreen, &[], 1, "s"),
        Err(AugmentError::UnsupportedCategory(_))
    ));
    let tiny = tree(200, 200, vec![text_node([0, 0, 100, 11], "Hi")]);
    assert!(aug.augment(&img, &tiny, BugCategory::NullValue, &[], 1, "s").is_err());
}

#[test]
fn singleton_view_is_the_target() {
    let t = tree(200, 200, vec![text_node([20, 30, 150, 60], "Only")]);
    let img = screen(200, 200);
    let (_, record) = Augmentor::default()
        .augment(&img, &t, BugCategory::NullValue, &[], 77, "s")
        .unwrap();
    assert_eq!(record.target_view, BBox::new(20, 30, 150, 60).unwrap());
    assert_eq!(record.bug_region, record.target_view);
}

#[test]
fn hierarchy_is_rescaled_to_the_screenshot() {
    let json = r#"{"activity": {"root": {"class": "X", "bounds": [0, 0, 400, 400], "children": [
        {"class": "android.widget.TextView", "bounds": [40, 60, 300, 120], "text": "Big"}]}}}"#;
    let t = parse_hierarchy(json).unwrap();
    let img = screen(200, 200);
    let (_, record) = Augmentor::default()
        .augment(&img, &t, BugCategory::NullValue, &[], 3, "s")
        .unwrap();
    assert_eq!(record.target_view, BBox::new(20, 30, 150, 60).unwrap());
}

fn rich_tree() -> ViewTree {
    tree(
        240,
        320,
        vec![
            text_node([8, 8, 200, 40], "Settings"),
            node("android.widget.ImageView", [8, 50, 120, 160], None),
            text_node([130, 60, 232, 90], "Wi-Fi"),
            node("android.widget.ImageView", [150, 200, 236, 316], None),
            text_node([8, 280, 140, 312], "Bluetooth"),
        ],
    )
}

#[test]
fn same_seed_same_bytes_and_replay() {
    let img = screen(240, 320);
    let t = rich_tree();
    let aug = Augmentor::default();
    for category in BugCategory::SYNTHESIZABLE {
        let (a, ra) = aug.augment(&img, &t, category, &[], 1234, "src").unwrap();
        let (b, rb) = aug.augment(&img, &t, category, &[], 1234, "src").unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        let mut replay = ReplayDraws::new(ra.rand_draws.clone());
        let (c, rc) = aug.augment_with(&img, &t, category, &[], &mut replay, "src").unwrap();
        assert_eq!(c, a);
        assert_eq!(rc.bug_region, ra.bug_region);
        assert_eq!(replay.into_log(), ra.rand_draws);
    }
}

#[test]
fn derived_seeds_differ_by_source() {
    assert_eq!(derive_seed(7, "a"), derive_seed(7, "a"));
    assert_ne!(derive_seed(7, "a"), derive_seed(7, "b"));
    assert_ne!(derive_seed(7, "a"), derive_seed(8, "a"));
}

#[test]
fn category_slugs_parse() {
    for c in BugCategory::ALL {
        assert_eq!(c.slug().parse::<BugCategory>().unwrap(), c);
        assert_eq!(serde_json::to_string(&c).unwrap(), format!("\"{}\"", c.slug()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn changes_stay_inside_the_ground_truth(seed in any::<u64>(), cat in 0usize..4) {
        let img = screen(240, 320);
        let category = BugCategory::SYNTHESIZABLE[cat];
        let (out, record) = Augmentor::default()
            .augment(&img, &rich_tree(), category, &[], seed, "p")
            .unwrap();
        let r = record.bug_region;
        prop_assert!(r.area() >= 1);
        prop_assert!(img.bounds().contains_box(&r));
        if let Some(changed) = changed_region(&img, &out) {
            prop_assert!(r.contains_box(&changed), "{changed:?} outside {r:?}");
        }
    }
}
