# Modules in src/ import each other by bare name; entry points put src/ on sys.path.
