//! Subword learning, task input assembly, and unit averaging.

mod assemble;
mod bpe;

pub use assemble::{assemble_dp, assemble_srl, average_units, AssembledInput, DpMode, SrlSetting};
pub use bpe::{
    SubwordModel, CLS, CLS_ID, PAD, PAD_ID, ROOT, ROOT_ID, SEP, SEP_ID, UNK, UNK_ID,
};
