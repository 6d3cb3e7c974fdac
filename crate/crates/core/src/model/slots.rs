//! Weight-slot names and shapes of the pre-activation ResNet-50.

use crate::weights::SlotSpec;

/// `(bottleneck width, block count, stride of the first block)` per stage.
pub const STAGES: [(usize, usize, usize); 4] = [(64, 3, 1), (128, 4, 2), (256, 6, 2), (512, 3, 2)];
pub const STEM_CHANNELS: usize = 64;
pub const FEATURE_DIM: usize = 2048;
pub const IMAGENET_CLASSES: usize = 1000;
pub const INPUT_SIZE: usize = 224;
pub const BN_EPSILON: f32 = 1.001e-5;
pub const BN_PARAMS: [&str; 4] = ["gamma", "beta", "moving_mean", "moving_var"];

pub fn block_prefix(stage: usize, block: usize) -> String {
    format!("stage{stage}/block{block}")
}

fn push_bn(out: &mut Vec<SlotSpec>, prefix: &str, channels: usize) {
    for p in BN_PARAMS {
        out.push(SlotSpec::new(format!("{prefix}/{p}"), vec![channels]));
    }
}

/// Every backbone slot, in canonical order (no classification head).
pub fn backbone_manifest() -> Vec<SlotSpec> {
    let mut out = vec![
        SlotSpec::new("stem/conv/kernel", vec![7, 7, 3, STEM_CHANNELS]),
        SlotSpec::new("stem/conv/bias", vec![STEM_CHANNELS]),
    ];
    let mut cin = STEM_CHANNELS;
    for (s, &(width, blocks, _)) in STAGES.iter().enumerate() {
        let cout = 4 * width;
        for b in 1..=blocks {
            let p = block_prefix(s + 1, b);
            push_bn(&mut out, &format!("{p}/preact_bn"), cin);
            if b == 1 {
                out.push(SlotSpec::new(format!("{p}/shortcut/kernel"), vec![1, 1, cin, cout]));
                out.push(SlotSpec::new(format!("{p}/shortcut/bias"), vec![cout]));
            }
            out.push(SlotSpec::new(format!("{p}/conv1/kernel"), vec![1, 1, cin, width]));
            push_bn(&mut out, &format!("{p}/bn1"), width);
            out.push(SlotSpec::new(format!("{p}/conv2/kernel"), vec![3, 3, width, width]));
            push_bn(&mut out, &format!("{p}/bn2"), width);
            out.push(SlotSpec::new(format!("{p}/conv3/kernel"), vec![1, 1, width, cout]));
            out.push(SlotSpec::new(format!("{p}/conv3/bias"), vec![cout]));
            cin = cout;
        }
    }
    push_bn(&mut out, "post_bn", cin);
    out
}

pub fn head_manifest(num_classes: usize) -> Vec<SlotSpec> {
    vec![
        SlotSpec::new("head/W", vec![FEATURE_DIM, num_classes]),
        SlotSpec::new("head/b", vec![num_classes]),
    ]
}

/// Backbone plus a `num_classes` head.
pub fn model_manifest(num_classes: usize) -> Vec<SlotSpec> {
    let mut m = backbone_manifest();
    m.extend(head_manifest(num_classes));
    m
}
