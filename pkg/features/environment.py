"""
Behave environment configuration with per-scenario working directories.

Every scenario gets a fresh temporary directory (``context.workdir``) that is
removed after the scenario, so file-writing steps never see each other's output.
"""

import logging
import os
import shutil
import sys
import tempfile

# Add the src directory to Python path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

FIXTURES_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'fixtures')
REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)


def before_all(context):
    """
    Set up the test environment before all scenarios.

    Args:
        context: Behave context object
    """
    logging.info("Starting test suite")
    context.fixtures_dir = FIXTURES_DIR
    context.repo_root = REPO_ROOT
    context.scenario_counter = 0


def before_scenario(context, scenario):
    """
    Create a clean working directory for the scenario.

    Args:
        context: Behave context object
        scenario: Current scenario object
    """
    context.scenario_counter += 1
    scenario_id = f"scenario_{context.scenario_counter}_{scenario.name.replace(' ', '_').lower()}"
    context.current_scenario_id = scenario_id
    context.workdir = tempfile.mkdtemp(prefix="unwrap_")
    logging.info(f"Starting scenario: {scenario.name} (ID: {scenario_id})")


def after_scenario(context, scenario):
    """
    Remove the scenario's working directory and log the result.

    Args:
        context: Behave context object
        scenario: Current scenario object
    """
    scenario_id = getattr(context, 'current_scenario_id', 'unknown')
    shutil.rmtree(getattr(context, 'workdir', ''), ignore_errors=True)

    if scenario.status.name == 'passed':
        logging.info(f"Scenario passed: {scenario.name}")
    elif scenario.status.name == 'failed':
        logging.error(f"Scenario failed: {scenario.name} (ID: {scenario_id})")
        if hasattr(context, 'last_error'):
            logging.error(f"Last error: {context.last_error}")
    else:
        logging.warning(f"Scenario status: {scenario.status.name} - {scenario.name}")


def after_all(context):
    logging.info("Test suite completed")


def before_step(context, step):
    logging.debug(f"Executing step: {step.step_type} {step.name}")


def after_step(context, step):
    """
    Called after each step execution.

    Args:
        context: Behave context object
        step: Current step object
    """
    if step.status.name == 'failed':
        logging.error(f"Step failed: {step.step_type} {step.name}")
        if getattr(step, 'exception', None) is not None:
            context.last_error = str(step.exception)
