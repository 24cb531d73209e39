//! Committed constant table of the synthetic benchmark (version 1).
//!
//! These values were drawn once from a fixed-seed generator and are frozen
//! here; the benchmark never regenerates them at runtime. Utilities index by
//! ordered slot pair (of the 4-node complete DAG) and operator; interactions
//! index by unordered slot-pair combination.

pub(crate) const SLOT_UTILITY: [[f64; 5]; 6] = [
    [2.3146, -1.4209, -1.8093, 2.5967, -1.3681],
    [-2.6387, -2.5718, 1.8405, -1.8035, 0.2126],
    [2.4388, -1.5687, 0.7494, 0.8412, -0.3895],
    [0.1951, -2.6245, 0.8477, -0.5605, 0.5123],
    [-1.0343, -2.8130, 0.9251, -1.7841, -1.1676],
    [2.2592, -2.0923, -2.8148, -2.5032, 0.3343],
];
pub(crate) const PAIR_INTERACTION: [[[f64; 5]; 5]; 15] = [
    [
        [0.1555, 0.1000, -0.3263, -0.6785, -0.5668],
        [0.6707, 0.3544, 0.6574, 0.1332, 0.5071],
        [0.0905, -0.5387, -0.1250, 0.3672, 0.2795],
        [-0.2207, -0.2607, -0.4899, 0.5645, 0.4783],
        [-0.1496, -0.5615, -0.5336, -0.5978, -0.3046],
    ],
    [
        [0.0787, -0.0338, -0.7037, 0.0644, 0.5016],
        [-0.0833, 0.5550, 0.2611, 0.1873, -0.6710],
        [0.6346, 0.5146, -0.0605, -0.7098, -0.3689],
        [0.2857, 0.0346, 0.4764, -0.3726, 0.6462],
        [-0.5523, 0.1959, -0.3873, -0.1615, 0.6158],
    ],
    [
        [-0.6736, 0.3233, 0.5139, 0.2125, 0.6263],
        [-0.5420, 0.6774, -0.1771, -0.6043, 0.0255],
        [0.2095, -0.2220, -0.5028, -0.3246, -0.0098],
        [-0.7408, -0.1236, -0.1565, -0.1238, 0.5236],
        [-0.5283, 0.1245, -0.4062, 0.7294, 0.6431],
    ],
    [
        [0.4782, 0.4613, 0.5136, -0.1624, -0.5944],
        [-0.6821, -0.3991, -0.1126, 0.7238, 0.2302],
        [-0.6948, 0.6114, 0.7436, 0.1868, 0.6501],
        [0.1670, 0.5444, 0.0314, 0.0854, -0.2474],
        [0.5625, 0.3027, -0.5266, 0.5201, 0.5264],
    ],
    [
        [-0.1276, -0.6478, 0.3705, -0.5411, -0.4420],
        [0.6211, 0.5224, -0.0468, -0.5672, -0.6998],
        [-0.5674, -0.6816, -0.4264, 0.0162, -0.2982],
        [-0.3725, -0.1601, -0.6427, -0.5862, -0.1865],
        [0.3780, 0.2194, -0.7242, 0.6224, -0.4140],
    ],
    [
        [0.3734, 0.5798, -0.6023, -0.2523, 0.5131],
        [-0.6339, 0.0309, -0.7008, 0.3621, 0.5294],
        [-0.3009, 0.5405, -0.2312, -0.2644, -0.1320],
        [-0.4604, 0.0352, 0.5649, -0.6484, -0.6902],
        [0.5723, 0.1923, 0.4143, 0.6315, -0.3968],
    ],
    [
        [-0.4936, 0.3791, 0.0359, -0.3708, 0.6791],
        [-0.4226, -0.0016, 0.0980, -0.6679, -0.1456],
        [-0.0066, 0.0386, -0.7339, -0.5658, -0.6925],
        [-0.3394, -0.3261, 0.6598, -0.1276, 0.0688],
        [-0.3807, 0.2041, -0.2253, -0.6765, 0.3069],
    ],
    [
        [0.4593, -0.5719, 0.2267, 0.1926, -0.5995],
        [-0.0257, 0.2986, 0.3562, 0.4651, 0.2230],
        [0.0138, 0.5839, 0.5725, 0.3363, 0.5930],
        [0.2594, 0.0664, -0.2297, -0.3732, -0.5496],
        [-0.0077, 0.0381, -0.1465, -0.6626, 0.1903],
    ],
    [
        [0.1510, 0.4222, -0.7494, -0.0445, 0.3289],
        [-0.3680, 0.5998, 0.5657, -0.4046, 0.1854],
        [-0.0833, -0.4617, 0.6444, -0.0334, 0.1746],
        [0.4834, -0.0800, 0.1484, -0.6093, 0.2325],
        [-0.6405, 0.0082, 0.6900, 0.6417, -0.7287],
    ],
    [
        [0.3055, 0.5756, 0.3868, 0.3782, 0.2165],
        [-0.5495, -0.2950, -0.0937, -0.2475, 0.3552],
        [-0.5560, -0.7243, 0.2785, 0.0871, -0.0543],
        [-0.5390, 0.3167, -0.1648, -0.2744, 0.4791],
        [0.6588, -0.4522, -0.0172, -0.4589, 0.2393],
    ],
    [
        [0.2625, -0.4650, 0.3139, 0.1607, 0.6562],
        [0.5650, -0.4548, -0.7429, -0.2394, 0.4745],
        [-0.1169, -0.4093, 0.1570, 0.3797, 0.2123],
        [0.4957, -0.1917, -0.2722, 0.6589, -0.1194],
        [-0.4848, -0.6238, 0.0403, 0.2780, 0.3575],
    ],
    [
        [-0.2932, -0.3865, -0.0080, -0.4387, -0.1859],
        [0.0389, 0.5714, -0.6429, 0.6139, -0.0440],
        [-0.5458, 0.3877, -0.5877, -0.3859, 0.6655],
        [0.5008, -0.6835, 0.5385, -0.5998, 0.6972],
        [0.7248, -0.2440, 0.7458, -0.6560, -0.2144],
    ],
    [
        [-0.0282, -0.4079, -0.5298, -0.1963, 0.2327],
        [-0.5638, -0.2856, 0.2520, -0.1482, 0.3873],
        [0.3862, 0.7167, -0.1312, 0.4984, 0.2979],
        [0.3682, 0.0024, 0.6162, -0.5593, 0.5116],
        [0.1475, -0.0670, 0.6500, -0.2674, -0.0558],
    ],
    [
        [-0.1198, -0.0999, 0.2436, -0.2083, -0.6151],
        [-0.6341, 0.4900, 0.0520, -0.2713, 0.1947],
        [-0.0623, -0.6801, 0.4963, -0.5144, 0.1712],
        [0.0346, 0.5507, -0.7391, 0.2032, 0.6134],
        [0.3347, -0.5442, 0.1950, -0.3065, 0.1694],
    ],
    [
        [-0.6502, -0.4403, -0.7149, 0.0605, -0.1003],
        [0.1387, -0.0909, 0.0852, 0.1694, -0.6732],
        [-0.0226, -0.0091, -0.6543, 0.4529, -0.3328],
        [0.5675, 0.7224, -0.2089, -0.6419, 0.5196],
        [0.2133, -0.6095, 0.3740, 0.5043, -0.1882],
    ],
];

/// Per-operator signal conductance used by the path-structure bonus.
/// Operator 0 blocks a path entirely (a "zero"-style op).
pub(crate) const OP_CONDUCTANCE: [f64; 5] = [0.0, 0.25, 0.55, 0.85, 1.0];

pub(crate) const BASE_SCORE: f64 = 58.0;
pub(crate) const PATH_WEIGHT: f64 = 2.0;

/// Maximum shape the committed table covers.
pub(crate) const TABLE_NODES: usize = 4;
pub(crate) const TABLE_OPS: usize = 5;
