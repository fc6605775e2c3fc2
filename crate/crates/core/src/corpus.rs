//! Kernel listings used as test fixtures, plus the negative cases.

/// (file stem, definition name, source)
pub const CORPUS: &[(&str, &str, &str)] = &[
    ("mv", "mv", include_str!("../corpus/mv.tc")),
    ("mv_oneline", "mv", include_str!("../corpus/mv_oneline.tc")),
    ("sgemm", "sgemm", include_str!("../corpus/sgemm.tc")),
    ("fcrelu", "fcrelu", include_str!("../corpus/fcrelu.tc")),
    ("conv2d", "conv2d", include_str!("../corpus/conv2d.tc")),
    ("maxpool2x2", "maxpool2x2", include_str!("../corpus/maxpool2x2.tc")),
    ("gather", "gather", include_str!("../corpus/gather.tc")),
    ("sconv2d", "sconv2d", include_str!("../corpus/sconv2d.tc")),
    ("conv1d", "conv1d", include_str!("../corpus/conv1d.tc")),
    ("outerProductMM", "outerProductMM", include_str!("../corpus/outerProductMM.tc")),
    ("tmm", "tmm", include_str!("../corpus/tmm.tc")),
    ("tbmm", "tbmm", include_str!("../corpus/tbmm.tc")),
    ("gconv", "gconv", include_str!("../corpus/gconv.tc")),
    ("2LUT", "2LUT", include_str!("../corpus/2LUT.tc")),
    ("MLP1", "MLP1", include_str!("../corpus/MLP1.tc")),
    ("MLP3", "MLP3", include_str!("../corpus/MLP3.tc")),
];

pub const MAXPOOL_NO_WHERE: &str = include_str!("../corpus_negative/maxpool_nowhere.tc");
pub const TRANSPOSE_INPLACE: &str = include_str!("../corpus_negative/transpose_inplace.tc");
pub const WHERE_OUT_OF_BOUNDS: &str = include_str!("../corpus_negative/where_oob.tc");

pub fn source(stem: &str) -> Option<&'static str> {
    CORPUS.iter().find(|(s, _, _)| *s == stem).map(|(_, _, src)| *src)
}
