//! The configuration example in the README stays loadable.

use gvl::app::RunConfig;

#[test]
fn readme_example_parses() {
    let readme = include_str!("../../../README.md");
    let start = readme.find("```toml\n").expect("toml block") + "```toml\n".len();
    let body = &readme[start..start + readme[start..].find("```").unwrap()];
    let cfg = RunConfig::parse(body, std::path::Path::new("/data/exp")).unwrap();
    assert_eq!(cfg.grid, [3, 3]);
    assert_eq!(cfg.cluster.sizes, vec![4, 3]);
    assert_eq!(cfg.limits.workers, Some(8));
    assert!(cfg.pipeline.prompt.include_geo_context);
    assert_eq!(cfg.out_dir(), std::path::Path::new("/data/exp/out"));
}
