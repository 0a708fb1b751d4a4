//! The stage functions chained through the public API with the offline
//! backend, plus graph-expansion properties on random citation graphs.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use proptest::prelude::*;
use surveyor_core::analysis::{run_analysis, AnalysisConfig};
use surveyor_core::code_analysis::{run_code_analysis, CodeAnalysisConfig, DirectoryFetcher};
use surveyor_core::gateway::{Gateway, HashEmbedder};
use surveyor_core::model::{EventLog, KnowledgeSubstrate, PaperId, PaperRecord};
use surveyor_core::offline::OfflineBackend;
use surveyor_core::refinement::{run_refinement, RefinementConfig};
use surveyor_core::retrieval::{expand_graph, run_retrieval, FixtureSource, RetrievalConfig};
use surveyor_core::understanding::{run_understanding, UnderstandingConfig};
use surveyor_core::writing::{run_writing, WritingConfig};
use surveyor_core::Context;

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/rag")
}

fn offline_ctx() -> Context {
    let g = Gateway::builder(Arc::new(OfflineBackend::new()), Arc::new(HashEmbedder::new(256)))
        .build()
        .unwrap();
    Context::new(Arc::new(g)).with_workers(2)
}

#[test]
fn stages_fill_the_substrate_and_survive_a_round_trip() {
    let ctx = offline_ctx();
    let topic = "retrieval-augmented generation";
    let source = FixtureSource::load(&fixture().join("papers.json")).unwrap();
    let papers = run_retrieval(&ctx, topic, &RetrievalConfig::default(), &source, None).unwrap();
    assert_eq!(papers.len(), 12);
    let mut s = KnowledgeSubstrate::new(topic);
    for p in papers.iter().cloned() {
        s.insert_paper(p);
    }
    s.keynotes = run_understanding(&ctx, &papers, &UnderstandingConfig::default());
    assert_eq!(s.keynotes.len(), 12);
    run_analysis(&ctx, &mut s, &AnalysisConfig::default()).unwrap();
    let covered: BTreeSet<&PaperId> = s.clusters.iter().flat_map(|c| &c.members).collect();
    assert_eq!(covered.len(), 12, "every paper lands in a cluster");
    let code_cfg = CodeAnalysisConfig {
        enabled: true,
        ..Default::default()
    };
    run_code_analysis(&ctx, &mut s, &DirectoryFetcher::new(fixture().join("repos")), &code_cfg).unwrap();
    assert_eq!(s.code_reports.len(), 3);
    let writing = WritingConfig::default();
    run_writing(&ctx, &mut s, &writing).unwrap();
    run_refinement(&ctx, &mut s, writing.citation_style, &RefinementConfig::default()).unwrap();
    s.check_integrity().unwrap();

    let dir = tempfile::tempdir().unwrap();
    s.save(dir.path()).unwrap();
    assert_eq!(KnowledgeSubstrate::load(dir.path()).unwrap(), s);
}

fn pid(n: usize) -> PaperId {
    PaperId::parse(&format!("2404.{n:05}")).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn expansion_keeps_seeds_first_and_never_repeats(
        edges in prop::collection::btree_set((0usize..40, 0usize..40), 0..200),
        seeds in 1usize..8,
        cap in 1usize..10,
    ) {
        let records: Vec<PaperRecord> = (0..40)
            .map(|i| {
                let mut r = PaperRecord::new(pid(i), format!("paper {i}"));
                r.out_citations = edges.iter().filter(|(s, t)| *s == i && s != t).map(|(_, t)| pid(*t)).collect();
                r
            })
            .collect();
        let source = FixtureSource::new(records.clone());
        let cfg = RetrievalConfig { per_seed_cap: cap, ..Default::default() };
        let out = expand_graph(&records[..seeds], &cfg, &source, &EventLog::new(), 2);
        let ids: Vec<PaperId> = out.iter().map(|p| p.id.clone()).collect();
        let unique: BTreeSet<&PaperId> = ids.iter().collect();
        prop_assert_eq!(unique.len(), ids.len());
        prop_assert_eq!(&ids[..seeds], &records[..seeds].iter().map(|r| r.id.clone()).collect::<Vec<_>>()[..]);
        prop_assert!(ids.len() <= seeds + seeds * cap);
    }
}
