use super::{
    build_manifest, BenchError, ConfigSnapshot, DatasetHeader, DatasetKind, DatasetManifest, FrameRecord, Scenario,
    SequenceInfo,
};

/// One archived dataset: identity, description and per-sequence image counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CatalogEntry {
    pub dataset_id: &'static str,
    pub scenario: Scenario,
    pub kind: DatasetKind,
    pub description: &'static str,
    pub sequence_counts: &'static [u64],
}

impl CatalogEntry {
    pub fn total_frames(&self) -> u64 {
        self.sequence_counts.iter().sum()
    }
}

const fn entry(
    dataset_id: &'static str,
    scenario: Scenario,
    kind: DatasetKind,
    description: &'static str,
    sequence_counts: &'static [u64],
) -> CatalogEntry {
    CatalogEntry { dataset_id, scenario, kind, description, sequence_counts }
}

use DatasetKind::{Laboratory, Real, Synthetic, SyntheticGan};
use Scenario::{ManMade, Natural};

const CATALOG: &[CatalogEntry] = &[
    entry("MAN-DATA-S1", ManMade, Synthetic, "Envisat HD", &[16000]),
    entry("MAN-DATA-S2", ManMade, Synthetic, "Envisat HD - random backgrounds", &[16000]),
    entry("MAN-DATA-S5", ManMade, Synthetic, "Envisat LD", &[13875]),
    entry("MAN-DATA-G1", ManMade, SyntheticGan, "GAN Envisat", &[13875]),
    entry("MAN-DATA-L1", ManMade, Laboratory, "Laboratory Envisat", &[16000]),
    entry("MAN-DATA-L2", ManMade, Laboratory, "Laboratory Envisat Background", &[16000]),
    entry("NAT-DATA-R1", Natural, Real, "Chang'e 3 Navcam", &[3655]),
    entry("NAT-DATA-L1", Natural, Laboratory, "TRON Testbed - Chang'e 3", &[3658]),
    entry("NAT-DATA-L2", Natural, Laboratory, "TRON Testbed - Random pairs", &[7238]),
    entry("NAT-DATA-S1", Natural, Synthetic, "MD Chang'e 3", &[3655]),
    entry("NAT-DATA-S2", Natural, Synthetic, "HD Chang'e 3", &[3655]),
    entry("NAT-DATA-S3", Natural, Synthetic, "HD + procedural details Chang'e 3", &[3655]),
    entry("NAT-DATA-G1", Natural, SyntheticGan, "MD + GAN Chang'e 3", &[1837]),
    entry("NAT-DATA-S5", Natural, Synthetic, "HD, 3 simulated trajectories", &[6661, 5591, 3736]),
];

/// The archived datasets of the lunar-landing and orbital-servicing campaigns.
pub fn catalog() -> &'static [CatalogEntry] {
    CATALOG
}

pub fn catalog_entry(dataset_id: &str) -> Option<&'static CatalogEntry> {
    CATALOG.iter().find(|e| e.dataset_id == dataset_id)
}

/// A metadata-only manifest for a catalogue entry: one image record per frame,
/// grouped into sequences `seq1`, `seq2`, ... with consecutive frame ids.
pub fn catalog_manifest(entry: &CatalogEntry) -> Result<DatasetManifest, BenchError> {
    let mut frames = Vec::with_capacity(entry.total_frames() as usize);
    let mut sequences = Vec::new();
    let mut id = 0u64;
    for (k, &n) in entry.sequence_counts.iter().enumerate() {
        let name = format!("seq{}", k + 1);
        for i in 0..n {
            frames.push(FrameRecord::image_only(id, &name, i as f64, format!("{name}/{i:06}.png")));
            id += 1;
        }
        sequences.push(SequenceInfo { name, frame_count: n });
    }
    let header = DatasetHeader {
        dataset_id: entry.dataset_id.into(),
        scenario: entry.scenario,
        kind: entry.kind,
        description: entry.description.into(),
        sequences,
    };
    build_manifest(header, frames, ConfigSnapshot::default(), None)
}
