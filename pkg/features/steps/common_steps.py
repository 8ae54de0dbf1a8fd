# features/steps/common_steps.py
"""
Outcome steps shared by every feature.
"""

from behave import then

from step_helpers import succeeded


@then(u'a {error_name} is raised')
def step_error_raised(context, error_name):
    error = getattr(context, 'error', None)
    if error is None:
        raise AssertionError(f"Expected {error_name}, but the call succeeded with {context.result!r}")
    names = [cls.__name__ for cls in type(error).__mro__]
    if error_name not in names:
        raise AssertionError(f"Expected {error_name}, got {type(error).__name__}: {error}")


@then(u'an {error_name} is raised')
def step_error_raised_an(context, error_name):
    step_error_raised(context, error_name)


@then(u'no error is raised')
def step_no_error(context):
    succeeded(context)


@then(u'the error message mentions "{text}"')
def step_error_mentions(context, text):
    if text not in str(context.error):
        raise AssertionError(f"Error message {str(context.error)!r} does not mention {text!r}")


@then(u'the error refers to frame {frame:d}')
def step_error_frame(context, frame):
    found = getattr(context.error, 'frame', None)
    if found != frame:
        raise AssertionError(f"Expected the error to refer to frame {frame}, got {found} ({context.error})")


@then(u'the error refers to line {line:d}')
def step_error_line(context, line):
    found = getattr(context.error, 'line', None)
    if found != line:
        raise AssertionError(f"Expected the error to refer to line {line}, got {found} ({context.error})")
