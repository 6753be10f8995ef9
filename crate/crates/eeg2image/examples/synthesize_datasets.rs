//! Generate the synthetic EEG and image corpora and write them in the
//! on-disk dataset format.

use eeg2image::dataio::{
    save_eeg_dataset, save_image_dataset, synth_eeg_corpus, synth_image_corpus, CLASS_NAMES,
};
use std::path::Path;

fn main() -> eeg2image::Result<()> {
    let root = Path::new("target/example-data");
    let windows = synth_eeg_corpus(20, 7)?;
    let images = synth_image_corpus(10, 7)?;
    save_eeg_dataset(&root.join("eeg"), &windows)?;
    save_image_dataset(&root.join("images"), &images)?;
    println!(
        "wrote {} EEG windows and {} images under {}",
        windows.len(),
        images.len(),
        root.display()
    );
    println!("classes: {}", CLASS_NAMES.join(", "));

    let w = &windows[0];
    println!(
        "first window: class {} ({}), subject {}, shape {:?}",
        w.label,
        CLASS_NAMES[w.label],
        w.subject,
        w.samples.shape()
    );
    Ok(())
}
