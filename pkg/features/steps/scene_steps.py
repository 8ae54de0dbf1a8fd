# features/steps/scene_steps.py
"""
Synthetic scene set-up shared by the unwrapping, metrics and CLI features.
"""

import json

from behave import given, when

from step_helpers import attempt, small_scene_config

from synth import generate_scene, scene_config


def _generate(context, cfg):
    context.scene_config = cfg
    context.scene = generate_scene(cfg)
    return context.scene


@given(u'a small synthetic scene with seed {seed:d}')
def step_small_scene(context, seed):
    _generate(context, small_scene_config(seed=seed))


@given(u'a small synthetic scene with seed {seed:d} and overrides')
def step_small_scene_overrides(context, seed):
    _generate(context, small_scene_config(json.loads(context.text), seed=seed))


@given(u'the default synthetic scene')
def step_default_scene(context):
    _generate(context, scene_config())


@given(u'the default synthetic scene with overrides')
def step_default_scene_overrides(context):
    _generate(context, scene_config(json.loads(context.text)))


@when(u'I generate a small synthetic scene with overrides')
def step_try_generate(context):
    attempt(context, generate_scene, small_scene_config(json.loads(context.text)))
    context.scene = context.result
