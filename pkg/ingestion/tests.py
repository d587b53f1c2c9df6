# Tests pour l'application Ingestion

import json
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from PIL import Image

from core.exceptions import ArgumentError, ImageFormatError, IngestionError
from ingestion.services.augmentation import (
    AugmentationConfig,
    TransformParams,
    augment_dataset,
    replay_from_provenance,
    sample_transform,
)
from ingestion.services.folds import fold_of, make_folds, split_for_fold
from ingestion.services.manifest import DatasetManifest, SampleRecord, load_manifest, write_manifest
from ingestion.services.preprocessing import load_arrays, preprocess_image, preprocess_mask
from ingestion.services.synthetic import generate_synthetic_dataset


def make_pair_directory(root: Path, count: int, size=(16, 16), seed=0):
    """Crée images/<id>.png et masks/<id>.png"""
    rng = np.random.default_rng(seed)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    for i in range(count):
        image = rng.integers(0, 256, size=size, dtype=np.uint8)
        mask = np.zeros(size, dtype=np.uint8)
        mask[size[0] // 4 : 3 * size[0] // 4, size[1] // 4 : 3 * size[1] // 4] = 255
        Image.fromarray(image).save(root / "images" / f"s{i:03d}.png")
        Image.fromarray(mask).save(root / "masks" / f"s{i:03d}.png")
    return root


class ManifestTest(SimpleTestCase):
    """Tests pour le chargement des manifestes"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_directory_convention(self):
        """Test 163 paires -> 163 enregistrements triés"""
        make_pair_directory(self.root, 163, size=(8, 8))
        manifest = load_manifest(self.root, modality="ultrasound")
        self.assertEqual(len(manifest), 163)
        self.assertEqual(manifest.ids, sorted(manifest.ids))
        self.assertTrue(manifest.only_originals)

    def test_empty_directory(self):
        """Test qu'un répertoire vide donne un manifeste vide"""
        manifest = load_manifest(self.root)
        self.assertEqual(len(manifest), 0)

    def test_missing_mask_in_csv(self):
        """Test l'erreur d'ingestion citant l'identifiant fautif"""
        make_pair_directory(self.root, 2)
        (self.root / "masks" / "s001.png").unlink()
        csv = self.root / "list.csv"
        csv.write_text(
            "id,image_path,mask_path\ns000,images/s000.png,masks/s000.png\ns001,images/s001.png,masks/s001.png\n",
            encoding="utf-8",
        )
        with self.assertRaises(IngestionError) as ctx:
            load_manifest(csv)
        self.assertEqual(ctx.exception.record_id, "s001")

    def test_size_mismatch(self):
        """Test l'erreur quand l'image et le masque n'ont pas la même taille"""
        make_pair_directory(self.root, 1)
        Image.fromarray(np.zeros((10, 10), dtype=np.uint8)).save(self.root / "masks" / "s000.png")
        with self.assertRaises(IngestionError) as ctx:
            load_manifest(self.root)
        self.assertEqual(ctx.exception.record_id, "s000")

    def test_duplicate_ids_rejected(self):
        """Test le rejet d'identifiants dupliqués"""
        record = SampleRecord("a", "x.png", "y.png")
        with self.assertRaises(IngestionError):
            DatasetManifest((record, record))

    def test_write_then_load(self):
        """Test l'écriture puis la relecture d'un manifeste CSV"""
        make_pair_directory(self.root, 3)
        manifest = load_manifest(self.root)
        path = write_manifest(manifest, self.root / "copy" / "manifest.csv")
        reloaded = load_manifest(path)
        self.assertEqual(reloaded.ids, manifest.ids)
        self.assertEqual([r.image_path for r in reloaded], [r.image_path.resolve() for r in manifest])


class PreprocessingTest(SimpleTestCase):
    """Tests pour le prétraitement des images et des masques"""

    def test_color_image(self):
        """Test une image couleur 640x480 -> 256x256 un canal dans [0,1]"""
        rgb = np.random.default_rng(0).integers(0, 256, size=(480, 640, 3), dtype=np.uint8)
        tensor = preprocess_image(Image.fromarray(rgb))
        self.assertEqual(tensor.shape, (256, 256))
        self.assertEqual(tensor.dtype, np.float32)
        self.assertGreaterEqual(float(tensor.min()), 0.0)
        self.assertLessEqual(float(tensor.max()), 1.0)

    def test_grayscale_identity_geometry(self):
        """Test une image 256x256 en niveaux de gris : pixels divisés par 255"""
        gray = np.random.default_rng(1).integers(0, 256, size=(256, 256), dtype=np.uint8)
        gray[0, 0] = 255
        tensor = preprocess_image(gray)
        np.testing.assert_allclose(tensor, gray.astype(np.float32) / 255.0, rtol=0, atol=1e-7)

    def test_constant_white(self):
        """Test une image blanche -> tenseur de 1"""
        white = np.full((256, 256, 3), 255, dtype=np.uint8)
        self.assertTrue(np.all(preprocess_image(white) == 1.0))

    def test_undecodable(self):
        """Test l'erreur de format sur des octets invalides"""
        with self.assertRaises(ImageFormatError):
            preprocess_image(b"not an image")

    def test_mask_resize_stays_binary(self):
        """Test un masque 512x512 -> 256x256 binaire"""
        mask = np.zeros((512, 512), dtype=np.uint8)
        mask[100:300, 50:400] = 255
        tensor = preprocess_mask(mask)
        self.assertEqual(tensor.shape, (256, 256))
        self.assertEqual(set(np.unique(tensor)), {0.0, 1.0})

    def test_empty_mask(self):
        """Test un masque vide"""
        self.assertEqual(float(preprocess_mask(np.zeros((64, 64), dtype=np.uint8)).sum()), 0.0)

    def test_label_mask_png(self):
        """Test un masque PNG 8 bits stocké en étiquettes 0/1 garde son avant-plan"""
        mask = np.zeros((32, 32), dtype=np.uint8)
        mask[4:20, 8:24] = 1
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "label.png"
            Image.fromarray(mask).save(path, format="PNG")
            tensor = preprocess_mask(path, size=(32, 32))
        self.assertEqual(int(tensor.sum()), 16 * 16)
        np.testing.assert_array_equal(tensor, mask.astype(np.float32))

    def test_label_mask_full_foreground(self):
        """Test un masque d'étiquettes entièrement à 1"""
        tensor = preprocess_mask(np.ones((32, 32), dtype=np.uint8), size=(16, 16))
        self.assertTrue(np.all(tensor == 1.0))

    def test_mask_threshold(self):
        """Test le seuil 0.5 sur des bords antialiasés"""
        mask = np.tile(np.array([0.0, 0.4, 0.6, 1.0]), (4, 1))
        tensor = preprocess_mask(mask, size=(4, 4))
        np.testing.assert_array_equal(tensor[0], [0.0, 0.0, 1.0, 1.0])


class AugmentationTest(SimpleTestCase):
    """Tests pour l'augmentation conjointe"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tmp = tempfile.TemporaryDirectory()
        cls.root = Path(cls.tmp.name)
        make_pair_directory(cls.root / "src", 163, size=(16, 16))
        cls.manifest = load_manifest(cls.root / "src", modality="ultrasound")
        cls.cfg = AugmentationConfig(target_total=600, seed=7)
        cls.augmented = augment_dataset(cls.manifest, cls.cfg, cls.root / "aug", size=(16, 16))

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()
        super().tearDownClass()

    def test_total_count(self):
        """Test 163 originaux -> 600 enregistrements dont 437 augmentés"""
        self.assertEqual(len(self.augmented), 600)
        augmented = [r for r in self.augmented if not r.is_original]
        self.assertEqual(len(augmented), 437)
        self.assertTrue(set(self.manifest.ids) <= set(self.augmented.ids))
        origins = {r.origin_id for r in augmented}
        self.assertTrue(origins <= set(self.manifest.ids))

    def test_masks_remain_binary(self):
        """Test que les masques augmentés restent strictement binaires"""
        _, masks = load_arrays(self.augmented, size=(16, 16))
        self.assertTrue(set(np.unique(masks)) <= {0.0, 1.0})

    def test_replay_is_byte_identical(self):
        """Test que la transformation enregistrée se rejoue à l'identique"""
        sidecar = self.root / "aug" / "augmentation.json"
        provenance = json.loads(sidecar.read_text(encoding="utf-8"))
        for record_id in sorted(provenance["records"])[:25]:
            image, mask = replay_from_provenance(self.manifest, sidecar, record_id)
            record = self.augmented.by_id()[record_id]
            np.testing.assert_array_equal(image, np.array(Image.open(record.image_path)))
            np.testing.assert_array_equal(mask, np.array(Image.open(record.mask_path)))

    def test_determinism(self):
        """Test que deux générations avec la même graine sont identiques octet par octet"""
        with tempfile.TemporaryDirectory() as other:
            again = augment_dataset(self.manifest, self.cfg, Path(other), size=(16, 16))
            for a, b in zip(self.augmented, again):
                self.assertEqual(a.id, b.id)
                self.assertEqual(a.image_path.read_bytes(), b.image_path.read_bytes())

    def test_sampling_is_order_independent(self):
        """Test que les paramètres ne dépendent que de (graine, original, réplique)"""
        self.assertEqual(sample_transform(self.cfg, 3, 1), sample_transform(self.cfg, 3, 1))
        self.assertNotEqual(sample_transform(self.cfg, 3, 1), sample_transform(self.cfg, 3, 2))

    def test_default_ranges(self):
        """Test les amplitudes par défaut (±10°, ±10 %, zoom ±10 %)"""
        for i in range(50):
            params = sample_transform(AugmentationConfig(seed=i), 0, 0)
            self.assertLessEqual(abs(params.rotation_deg), 10.0)
            self.assertLessEqual(abs(params.shift_x), 0.1)
            self.assertLessEqual(abs(params.shear_deg), 10.0)
            self.assertLessEqual(abs(params.zoom - 1.0), 0.1)

    def test_identity_transform(self):
        """Test qu'une transformation neutre conserve l'image"""
        from ingestion.services.augmentation import apply_transform

        image = np.random.default_rng(0).random((16, 16)).astype(np.float32)
        np.testing.assert_allclose(apply_transform(image, TransformParams(), order=1), image, atol=1e-6)

    def test_target_equals_originals(self):
        """Test que target_total = nombre d'originaux renvoie l'entrée"""
        cfg = AugmentationConfig(target_total=163)
        self.assertIs(augment_dataset(self.manifest, cfg, self.root / "unused"), self.manifest)

    def test_target_below_originals(self):
        """Test l'erreur quand target_total < nombre d'originaux"""
        with self.assertRaises(ArgumentError):
            augment_dataset(self.manifest, AugmentationConfig(target_total=10), self.root / "unused")


class FoldsTest(SimpleTestCase):
    """Tests pour la validation croisée"""

    @staticmethod
    def originals(count):
        return DatasetManifest(tuple(SampleRecord(f"id{i:03d}", "i.png", "m.png") for i in range(count)))

    def test_fold_sizes_163(self):
        """Test 163 originaux, 5 folds -> tailles {33,33,33,32,32}"""
        folds = make_folds(self.originals(163), 5, seed=1)
        self.assertEqual(sorted(folds.sizes().values(), reverse=True), [33, 33, 33, 32, 32])

    def test_fold_sizes_240(self):
        """Test 240 originaux -> 5 folds de 48"""
        self.assertEqual(set(make_folds(self.originals(240), 5, seed=1).sizes().values()), {48})

    def test_determinism(self):
        """Test la reproductibilité de l'affectation"""
        manifest = self.originals(50)
        self.assertEqual(make_folds(manifest, 5, 3), make_folds(manifest, 5, 3))

    def test_invalid_fold_counts(self):
        """Test les erreurs sur fold_count"""
        with self.assertRaises(ArgumentError):
            make_folds(self.originals(10), 1, 0)
        with self.assertRaises(ArgumentError):
            make_folds(self.originals(3), 4, 0)

    def test_augmented_manifest_rejected(self):
        """Test que les folds se calculent avant augmentation"""
        records = (SampleRecord("a", "i", "m"), SampleRecord("a__aug000", "i", "m", origin_id="a"))
        with self.assertRaises(ArgumentError):
            make_folds(DatasetManifest(records), 2, 0)

    def test_every_original_validated_once(self):
        """Test que chaque original est en validation exactement une fois"""
        manifest = self.originals(163)
        folds = make_folds(manifest, 5, seed=9)
        seen = []
        for fold in range(1, 6):
            train, validation = split_for_fold(manifest, folds, fold)
            self.assertFalse(set(train.ids) & set(validation.ids))
            seen += validation.ids
        self.assertEqual(sorted(seen), manifest.ids)

    def test_no_augmented_leakage(self):
        """Test qu'aucun échantillon augmenté issu du fold de validation n'est en entraînement"""
        with tempfile.TemporaryDirectory() as tmp:
            root = Path(tmp)
            make_pair_directory(root / "src", 40, size=(8, 8))
            manifest = load_manifest(root / "src")
            folds = make_folds(manifest, 5, seed=2)
            for fold in range(1, 6):
                train, validation = split_for_fold(manifest, folds, fold)
                augmented = augment_dataset(train, AugmentationConfig(target_total=80, seed=fold), root / f"f{fold}", size=(8, 8))
                for record in augmented:
                    self.assertNotEqual(fold_of(record, folds), fold)
                self.assertTrue(all(fold_of(r, folds) == fold for r in validation))


class SyntheticTest(SimpleTestCase):
    """Tests pour les jeux synthétiques"""

    def test_generation(self):
        """Test la génération de paires binaires reproductibles"""
        with tempfile.TemporaryDirectory() as a, tempfile.TemporaryDirectory() as b:
            first = generate_synthetic_dataset("speckle", 4, (32, 32), seed=5, output_dir=a)
            second = generate_synthetic_dataset("speckle", 4, (32, 32), seed=5, output_dir=b)
            self.assertEqual(len(load_manifest(a)), 4)
            images, masks = load_arrays(first, size=(32, 32))
            self.assertTrue(set(np.unique(masks)) <= {0.0, 1.0})
            self.assertGreater(float(masks.sum()), 0.0)
            for x, y in zip(first, second):
                self.assertEqual(x.image_path.read_bytes(), y.image_path.read_bytes())

    def test_blobs(self):
        """Test que les blobs sont plus clairs que le fond"""
        with tempfile.TemporaryDirectory() as tmp:
            manifest = generate_synthetic_dataset("blobs", 3, (64, 64), seed=0, output_dir=tmp)
            images, masks = load_arrays(manifest, size=(64, 64))
            self.assertGreater(images[masks == 1].mean(), images[masks == 0].mean())
