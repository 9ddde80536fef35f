# Per-channel statistics of the CIFAR-10 training split. Applied inside the
# encoder so that stored pixels and attacks stay in [0, 1].
CIFAR10_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR10_STD = (0.2470, 0.2435, 0.2616)

CIFAR10_CLASSES = ('airplane', 'automobile', 'bird', 'cat', 'deer',
                   'dog', 'frog', 'horse', 'ship', 'truck')

TRAIN_FILES = tuple('data_batch_%d.bin' % i for i in range(1, 6))
TEST_FILE = 'test_batch.bin'

# Encoder layer lists: (kind, in_channels, out_channels, stride)
DESK_ENCODER = (
    ('conv', 3, 32, 1),
    ('conv', 32, 32, 1),
    ('pool', 32, 32, 2),
    ('conv', 32, 64, 1),
    ('conv', 64, 64, 1),
    ('pool', 64, 64, 2),
    ('gap', 64, 64, 1),
)

# Normalization-free ResNet-18 layout: stem, four stages of two basic blocks
RESNET18_ENCODER = (
    ('conv', 3, 64, 1),
    ('block', 64, 64, 1), ('block', 64, 64, 1),
    ('block', 64, 128, 2), ('block', 128, 128, 1),
    ('block', 128, 256, 2), ('block', 256, 256, 1),
    ('block', 256, 512, 2), ('block', 512, 512, 1),
    ('gap', 512, 512, 1),
)

# Smoke-test encoder: two convs and two pools, d=8
TINY_ENCODER = (
    ('conv', 3, 8, 1),
    ('pool', 8, 8, 2),
    ('conv', 8, 8, 1),
    ('pool', 8, 8, 2),
    ('gap', 8, 8, 1),
)

ENCODERS = {
    'desk': DESK_ENCODER,
    'resnet18': RESNET18_ENCODER,
    'tiny': TINY_ENCODER,
}

# Projection head (hidden, output) sizes per encoder
PROJECTION_DIMS = {
    'desk': (64, 32),
    'resnet18': (512, 128),
    'tiny': (8, 4),
}

CHECKPOINT_MAGIC = b'CLAF'
CHECKPOINT_VERSION = 1

METRICS_HEADER = ('stage', 'epoch', 'loss', 'lr', 'clean_acc',
                  'robust_acc_eps8', 'robust_acc_eps16')

# Published full-scale numbers (percent): clean, PGD-10 8/255, PGD-10 16/255.
# Printed next to desk-scale results for orientation only.
REFERENCE_RESULTS = {
    'scl': (92.6, 18.3, 9.1),
    'claf': (92.4, 60.4, 48.3),
    'classifier_nat_vs_adv': {'natural': (92.3, 56.1, 47.5),
                              'adversarial': (92.4, 60.4, 48.3)},
    'eval_nat_vs_adv': {'natural': (92.4, 60.4, 48.3),
                        'adversarial': (81.9, 50.7, 36.5)},
    'reinit_vs_continuous': {'reinitialized': (92.2, 60.8, 49.5),
                             'continuous': (92.4, 60.4, 48.3)},
    'reuse_c': {'fresh': (92.4, 60.4, 48.3),
                'continued': (92.4, 60.9, 48.3)},
    'pgd_steps': {20: 60.12, 40: 60.05, 100: 60.03},
}
