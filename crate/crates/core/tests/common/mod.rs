//! Shared fixtures for integration and acceptance tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::{GrayImage, Luma, Rgb, RgbImage};
use sha2::{Digest, Sha256};

use gvl::gateway::{Backend, FnBackend, Gateway, ModelRequest, ModelResponse, RecordingBackend, RequestKind, Transcript};
use gvl::imaging::{BUILDINGS, NO_BUILDINGS};
use gvl::taxonomy::{ClassLabel, ClusterSpec, ClusteringConfig, Taxonomy, TaxonomyNode, ROOT};

pub fn labels(names: &[&str]) -> Vec<ClassLabel> {
    names.iter().map(|n| ClassLabel::new(n).unwrap()).collect()
}

pub const UCM_CLASSES: [&str; 21] = [
    "agricultural", "airplane", "baseballdiamond", "beach", "buildings", "chaparral", "denseresidential",
    "forest", "freeway", "golfcourse", "harbor", "intersection", "mediumresidential", "mobilehomepark",
    "overpass", "parkinglot", "river", "runway", "sparseresidential", "storagetanks", "tenniscourt",
];

pub const RESISC_CLASSES: [&str; 45] = [
    "airplane", "airport", "baseball_diamond", "basketball_court", "beach", "bridge", "chaparral", "church",
    "circular_farmland", "cloud", "commercial_area", "dense_residential", "desert", "forest", "freeway",
    "golf_course", "ground_track_field", "harbor", "industrial_area", "intersection", "island", "lake",
    "meadow", "medium_residential", "mobile_home_park", "mountain", "overpass", "palace", "parking_lot",
    "railway", "railway_station", "rectangular_farmland", "river", "roundabout", "runway", "sea_ice", "ship",
    "snowberg", "sparse_residential", "stadium", "storage_tank", "tennis_court", "terrace",
    "thermal_power_station", "wetland",
];

type Group<'a> = (&'a str, &'a [&'a str]);

fn one_level(groups: &[Group<'_>]) -> Taxonomy {
    Taxonomy::new(TaxonomyNode::branch(
        ROOT,
        groups.iter().map(|(n, m)| TaxonomyNode::leaf_group(*n, labels(m))).collect(),
    ))
    .unwrap()
}

fn two_levels(groups: &[(&str, &[Group<'_>])]) -> Taxonomy {
    Taxonomy::new(TaxonomyNode::branch(
        ROOT,
        groups
            .iter()
            .map(|(n, subs)| {
                TaxonomyNode::branch(
                    *n,
                    subs.iter().map(|(s, m)| TaxonomyNode::leaf_group(*s, labels(m))).collect(),
                )
            })
            .collect(),
    ))
    .unwrap()
}

/// UC Merced meta-classes, one level, as clustered by Llama-3.1.
pub fn ucm_llama() -> Taxonomy {
    one_level(&[
        (
            "Manmade Structures",
            &["baseballdiamond", "buildings", "harbor", "intersection", "overpass", "parkinglot", "storagetanks"],
        ),
        ("Natural Environments", &["agricultural", "beach", "chaparral", "forest", "river"]),
        ("Recreational Facilities", &["golfcourse", "tenniscourt"]),
        ("Residential Areas", &["denseresidential", "mediumresidential", "mobilehomepark", "sparseresidential"]),
        ("Transportation Infrastructure", &["airplane", "freeway", "runway"]),
    ])
}

/// UC Merced meta-classes, one level, as clustered by GPT-4o.
pub fn ucm_gpt4o() -> Taxonomy {
    one_level(&[
        ("Natural Landscapes", &["agricultural", "beach", "chaparral", "forest", "river"]),
        ("Recreational Areas", &["baseballdiamond", "golfcourse", "tenniscourt"]),
        ("Residential Areas", &["denseresidential", "mediumresidential", "mobilehomepark", "sparseresidential"]),
        (
            "Transportation",
            &["airplane", "freeway", "harbor", "intersection", "overpass", "parkinglot", "runway"],
        ),
        ("Urban Infrastructure", &["buildings", "storagetanks"]),
    ])
}

/// RESISC45 meta-classes, two levels, as clustered by Llama-3.1.
pub fn resisc_llama() -> Taxonomy {
    two_levels(&[
        (
            "Bodies of Water",
            &[
                ("Aquatic Ecosystems", &["wetland"]),
                ("Bodies of Water", &["lake", "river"]),
                ("Glaciers and Ice", &["sea_ice", "snowberg"]),
            ],
        ),
        (
            "Manmade Structures",
            &[
                (
                    "Manmade Structures",
                    &[
                        "baseball_diamond", "church", "commercial_area", "dense_residential", "harbor",
                        "intersection", "medium_residential", "palace", "parking_lot", "railway_station",
                        "roundabout", "ship", "sparse_residential", "stadium", "storage_tank", "terrace",
                        "thermal_power_station",
                    ],
                ),
                ("Natural & Agricultural Landscapes", &["circular_farmland", "rectangular_farmland"]),
                (
                    "Transportation Infrastructure",
                    &["airplane", "airport", "bridge", "freeway", "overpass", "railway", "runway"],
                ),
            ],
        ),
        (
            "Natural Landscapes",
            &[
                ("Coastal & Isolated Environments", &["beach", "island"]),
                ("Landscapes with Vegetation", &["chaparral", "forest", "meadow"]),
                ("Natural Landforms", &["cloud", "desert", "mountain"]),
            ],
        ),
        (
            "Recreational & Industrial Areas",
            &[
                ("Recreational & Industrial Areas", &["industrial_area"]),
                ("Residential Areas", &["mobile_home_park"]),
                ("Sports Facilities", &["basketball_court", "golf_course", "ground_track_field", "tennis_court"]),
            ],
        ),
    ])
}

/// RESISC45 meta-classes, two levels, as clustered by GPT-4o.
pub fn resisc_gpt4o() -> Taxonomy {
    two_levels(&[
        (
            "Natural Landscapes",
            &[
                ("Agricultural and Terrain", &["circular_farmland", "rectangular_farmland"]),
                ("Aquatic and Water Bodies", &["lake", "river", "sea_ice", "wetland"]),
                (
                    "Natural Landscape and Vegetation",
                    &["beach", "chaparral", "cloud", "desert", "forest", "island", "meadow", "mountain", "snowberg"],
                ),
            ],
        ),
        (
            "Recreational Facilities",
            &[
                ("Ball Sports", &["baseball_diamond", "basketball_court", "stadium", "tennis_court"]),
                ("Golf", &["golf_course"]),
                ("Track and Field", &["ground_track_field"]),
            ],
        ),
        (
            "Transportation & Infrastructure",
            &[
                ("Industrial Facilities", &["ship", "storage_tank", "thermal_power_station"]),
                ("Traffic Structures", &["bridge", "intersection", "overpass", "roundabout"]),
                (
                    "Transportation Infrastructure",
                    &["airplane", "airport", "freeway", "harbor", "parking_lot", "railway", "railway_station", "runway"],
                ),
            ],
        ),
        (
            "Urban Structures",
            &[
                ("Commercial & Industrial Zones", &["commercial_area", "industrial_area"]),
                ("Public & Historic Buildings", &["church", "palace"]),
                (
                    "Residential Areas",
                    &["dense_residential", "medium_residential", "mobile_home_park", "sparse_residential", "terrace"],
                ),
            ],
        ),
    ])
}

fn name_reply(names: &[&str], style: usize) -> String {
    let lines: Vec<String> = names
        .iter()
        .enumerate()
        .map(|(i, n)| match style % 3 {
            0 => format!("Cluster_{}: {n}", i + 1),
            1 => format!("- Cluster {}: [{n}]", i + 1),
            _ => format!("{}. **Cluster_{}:** {n}", i + 1, i + 1),
        })
        .collect();
    if style % 2 == 1 {
        format!("Here are the categories:\n\n{}\n", lines.join("\n"))
    } else {
        lines.join("\n")
    }
}

fn assign_reply(name: &str, style: usize) -> String {
    match style % 4 {
        0 => format!("Cluster: {name}"),
        1 => format!("Cluster: [{name}]"),
        2 => format!("**Cluster:** {name}."),
        _ => format!("Cluster: {name}\n\nThis label fits best there."),
    }
}

/// Writes the clustering conversation that yields `target` from `input`
/// under `spec`: one names reply per branch and one assignment per label.
pub fn script_clustering(
    target: &Taxonomy,
    input: &[ClassLabel],
    spec: &ClusterSpec,
    cfg: &ClusteringConfig,
) -> Transcript {
    let mut t = Transcript::new();
    let mut counter = 0usize;
    script_node(target.root(), input, spec.sizes(), cfg, &mut t, &mut counter);
    t
}

fn script_node(
    node: &TaxonomyNode,
    input: &[ClassLabel],
    sizes: &[usize],
    cfg: &ClusteringConfig,
    t: &mut Transcript,
    counter: &mut usize,
) {
    if sizes.is_empty() || input.len() <= 1 || node.children.is_empty() {
        return;
    }
    let names: Vec<&str> = node.children.iter().map(|c| c.name.as_str()).collect();
    let names_req = ModelRequest::new(RequestKind::Classify, &cfg.model_id, cfg.names_prompt(input, sizes[0]))
        .with_decoding(cfg.decoding);
    t.insert(&names_req, ModelResponse::text(name_reply(&names, *counter)));
    *counter += 1;
    for label in input {
        let owner = node
            .children
            .iter()
            .find(|c| leaves_under(c).contains(label))
            .expect("every input label sits under one child");
        let req = ModelRequest::new(RequestKind::Classify, &cfg.model_id, cfg.assign_prompt(label, &names))
            .with_decoding(cfg.decoding);
        t.insert(&req, ModelResponse::text(assign_reply(&owner.name, *counter)));
        *counter += 1;
    }
    for child in &node.children {
        let under = leaves_under(child);
        let members: Vec<ClassLabel> = input.iter().filter(|l| under.contains(l)).cloned().collect();
        script_node(child, &members, &sizes[1..], cfg, t, counter);
    }
}

pub fn leaves_under(node: &TaxonomyNode) -> Vec<ClassLabel> {
    let mut out = node.leaves.clone();
    for c in &node.children {
        out.extend(leaves_under(c));
    }
    out
}

/// Two-level taxonomy over the binary building classes.
pub fn spacenet_taxonomy() -> Taxonomy {
    one_level(&[("Developed", &[BUILDINGS]), ("Undeveloped", &[NO_BUILDINGS])])
}

pub struct SpaceNetFixture {
    pub dir: PathBuf,
    pub manifest: PathBuf,
    pub scenes: usize,
}

fn hash64(parts: &str) -> u64 {
    let h = Sha256::digest(parts.as_bytes());
    u64::from_le_bytes(h[..8].try_into().unwrap())
}

const ROOF: Rgb<u8> = Rgb([220, 40, 30]);

/// A SpaceNet-style dataset: `scenes` scenes with two timestamped versions
/// each, RGB PNGs of `size`x`size` pixels and matching footprint masks. A
/// footprint is painted as a red block at the centre of a 3x3 grid cell.
pub fn spacenet_fixture(dir: &Path, scenes: usize, size: u32) -> SpaceNetFixture {
    std::fs::create_dir_all(dir.join("images")).unwrap();
    std::fs::create_dir_all(dir.join("masks")).unwrap();
    let mut rows = String::from("path,scene_id,mask_path,split,timestamp\n");
    let cell = size / 3;
    for s in 0..scenes {
        for month in [1u32, 7] {
            let token = format!("L15-{:04}E-{:04}N", 100 + s * 7, 900 + s * 3);
            let name = format!("global_monthly_2020_{month:02}_mosaic_{token}_{s}.png");
            let bits = hash64(&format!("{s}:{month}"));
            let tint = (s as u32 * 7 + month * 3) % 40;
            let mut img = RgbImage::from_fn(size, size, |x, y| {
                let key = (x + size * y + size * size * (s as u32 * 12 + month)).wrapping_mul(2_654_435_761);
                let noise = key >> 26;
                Rgb([30 + (x % 5) as u8, 140 + (y % 7) as u8, (20 + tint + noise % 60) as u8])
            });
            let mut mask = GrayImage::new(size, size);
            for r in 0..3 {
                for c in 0..3 {
                    if bits >> (r * 3 + c) & 1 == 1 {
                        let (cx, cy) = (c * cell + cell / 2, r * cell + cell / 2);
                        for y in cy - 1..=cy + 1 {
                            for x in cx - 1..=cx + 1 {
                                img.put_pixel(x, y, ROOF);
                                mask.put_pixel(x, y, Luma([255]));
                            }
                        }
                    }
                }
            }
            img.save(dir.join("images").join(&name)).unwrap();
            mask.save(dir.join("masks").join(&name)).unwrap();
            rows.push_str(&format!("images/{name},scene_{s:02},masks/{name},test,2020-{month:02}\n"));
        }
    }
    let manifest = dir.join("manifest.csv");
    std::fs::write(&manifest, rows).unwrap();
    SpaceNetFixture {
        dir: dir.to_path_buf(),
        manifest,
        scenes,
    }
}

fn red_pixels(bytes: &[u8]) -> usize {
    let img = image::load_from_memory(bytes).unwrap().to_rgb8();
    img.pixels().filter(|p| p.0[0] > 200 && p.0[1] < 80).count()
}

fn blue_sum(bytes: &[u8]) -> u64 {
    let img = image::load_from_memory(bytes).unwrap().to_rgb8();
    img.pixels().map(|p| u64::from(p.0[2])).sum()
}

fn between<'a>(text: &'a str, start: &str, end: &str) -> &'a str {
    let from = text.find(start).map_or(0, |i| i + start.len());
    let rest = &text[from..];
    rest.find(end).map_or(rest, |j| &rest[..j])
}

/// A deterministic stand-in for all model roles. It "sees" red roofs and
/// answers by keyword, with the odd empty or unusable reply. Embeddings agree
/// with what it sees.
pub fn rule_backend() -> Arc<dyn Backend> {
    Arc::new(FnBackend::new("rules", |req: &ModelRequest| {
        let noise = hash64(&req.fingerprint());
        Ok(match req.kind {
            RequestKind::Describe => {
                let bytes = &req.image.as_ref().unwrap().bytes;
                let (roofs, tone) = (red_pixels(bytes), blue_sum(bytes));
                if noise.is_multiple_of(17) && !req.prompt.contains("previous answer was empty") {
                    ModelResponse::text("")
                } else if roofs > 0 {
                    ModelResponse::text(format!("An urban block with several buildings and {roofs} red roof pixels, tone {tone}."))
                } else {
                    ModelResponse::text(format!("Open green fields with hedges, tone {tone}."))
                }
            }
            RequestKind::Classify => {
                let description = between(&req.prompt, "Description: ", ". Choose exactly");
                let options: Vec<&str> = between(&req.prompt, "class from: ", ". Answer with").split(", ").collect();
                let urban = description.contains("buildings");
                let wanted: &[&str] = if urban { &["Buildings", "Developed"] } else { &["No Buildings", "Undeveloped"] };
                let pick = options.iter().find(|o| wanted.contains(o)).copied();
                match pick {
                    _ if noise.is_multiple_of(5) => ModelResponse::text("I cannot tell from this description."),
                    Some(p) if noise.is_multiple_of(3) => ModelResponse::text(format!("The answer is {p}.")),
                    Some(p) => ModelResponse::text(p),
                    None => ModelResponse::text("Unsure"),
                }
            }
            RequestKind::EmbedImage => {
                let roofs = red_pixels(&req.image.as_ref().unwrap().bytes) > 0;
                ModelResponse::vector(if roofs { vec![1.0, 0.1, 0.3] } else { vec![0.1, 1.0, 0.3] })
            }
            RequestKind::EmbedText => {
                let p = &req.prompt;
                ModelResponse::vector(if p.ends_with("No Buildings") || p.ends_with("Undeveloped") {
                    vec![0.0, 1.0, 0.3]
                } else if p.ends_with("Buildings") || p.ends_with("Developed") {
                    vec![1.0, 0.0, 0.3]
                } else {
                    vec![0.5, 0.5, 0.5]
                })
            }
        })
    }))
}

/// Gateway over a recorder wrapping the rule backend.
pub fn recording_gateway() -> (Gateway, Arc<RecordingBackend>) {
    let recorder = Arc::new(RecordingBackend::new(rule_backend()));
    (Gateway::new(recorder.clone()), recorder)
}

pub fn write(path: &Path, body: &str) -> PathBuf {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).unwrap();
    }
    std::fs::write(path, body).unwrap();
    path.to_path_buf()
}

/// Replays a run-hier over the fixture through a recorder and saves the
/// transcript, so later runs can be served from it alone.
pub fn record_hierarchical_transcript(cfg: &gvl::app::RunConfig, taxonomy: &Taxonomy, out: &Path) {
    let patches = gvl::app::load_patches(cfg).unwrap();
    let (gw, recorder) = recording_gateway();
    let backends = gvl::pipeline::Backends {
        describer: &gw,
        classifier: &gw,
        embedder: &gw,
    };
    gvl::hierarchy::classify_hierarchical_batch(&patches, taxonomy, &cfg.pipeline, backends).unwrap();
    recorder.transcript().save(out).unwrap();
}

/// Same for a flat classification run.
pub fn record_flat_transcript(cfg: &gvl::app::RunConfig, classes: &[ClassLabel], out: &Path) {
    let patches = gvl::app::load_patches(cfg).unwrap();
    let (gw, recorder) = recording_gateway();
    let backends = gvl::pipeline::Backends {
        describer: &gw,
        classifier: &gw,
        embedder: &gw,
    };
    gvl::pipeline::classify_patches(&patches, classes, &cfg.pipeline, backends).unwrap();
    recorder.transcript().save(out).unwrap();
}

/// Config body for a scripted run over the fixture.
pub fn scripted_config(manifest: &Path, transcript: &Path, extra: &str) -> String {
    format!(
        "manifest = {manifest:?}\n\
         grid = [3, 3]\n\
         seed = 7\n\
         cache_dir = \"cache\"\n\
         out_dir = \"out\"\n\
         {extra}\n\
         [backends.default]\n\
         kind = \"scripted\"\n\
         transcript = {transcript:?}\n",
        manifest = manifest.display().to_string(),
        transcript = transcript.display().to_string(),
    )
}
